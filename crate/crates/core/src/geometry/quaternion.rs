use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Unit quaternion `w + xi + yj + zk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quaternion {
    fn default() -> Self {
        Quaternion::IDENTITY
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Right-handed rotation of `angle` radians about `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Quaternion {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion {
            w: self.w / n,
            x: self.x / n,
            y: self.y / n,
            z: self.z / n,
        }
    }

    pub fn conjugate(&self) -> Self {
        Quaternion {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`: applies `rhs` first, then `self`.
    pub fn mul(&self, rhs: &Quaternion) -> Self {
        let (a, b) = (self, rhs);
        Quaternion {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        let m = self.to_matrix();
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let Quaternion { w, x, y, z } = *self;
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

/// A right-angle rotation about one tensor index axis.
///
/// Axis 0, 1 and 2 play the roles of x, y and z in the index space; the
/// default camera chain is written `[Z:180°, Y:90°]`, i.e. axis 2 then axis 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRotation {
    pub axis: usize,
    /// Degrees; one of 0, 90, -90 or 180.
    pub angle: f64,
}

/// Chain that brings an image-oriented feature tensor into BEV orientation.
pub const CAMERA_TO_BEV: [AxisRotation; 2] = [
    AxisRotation { axis: 2, angle: 180.0 },
    AxisRotation { axis: 1, angle: 90.0 },
];

impl AxisRotation {
    pub fn new(axis: usize, angle: f64) -> Result<Self> {
        let r = AxisRotation { axis, angle };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if ![0.0, 90.0, -90.0, 180.0].contains(&self.angle) {
            return Err(Error::NonRightAngle(self.angle));
        }
        if self.axis >= 3 {
            return Err(Error::BadAxis {
                axis: self.axis,
                rank: 3,
            });
        }
        Ok(())
    }

    pub fn inverse(&self) -> Self {
        let angle = if self.angle == 180.0 || self.angle == 0.0 {
            self.angle
        } else {
            -self.angle
        };
        AxisRotation { axis: self.axis, angle }
    }

    pub fn quaternion(&self) -> Quaternion {
        let mut axis = [0.0; 3];
        axis[self.axis] = 1.0;
        Quaternion::from_axis_angle(axis, self.angle.to_radians())
    }
}

impl std::fmt::Display for AxisRotation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = ["X", "Y", "Z"].get(self.axis).copied().unwrap_or("?");
        write!(f, "{name}:{}°", self.angle)
    }
}

/// Chain that undoes `chain`.
pub fn inverse_chain(chain: &[AxisRotation]) -> Vec<AxisRotation> {
    chain.iter().rev().map(AxisRotation::inverse).collect()
}

/// Signed permutation matrix with entries in {-1, 0, 1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationMatrix(pub [[i32; 3]; 3]);

impl RotationMatrix {
    pub const IDENTITY: RotationMatrix = RotationMatrix([[1, 0, 0], [0, 1, 0], [0, 0, 1]]);

    pub fn apply(&self, v: [i64; 3]) -> [i64; 3] {
        let m = &self.0;
        let mut out = [0i64; 3];
        for (a, o) in out.iter_mut().enumerate() {
            *o = (0..3).map(|b| m[a][b] as i64 * v[b]).sum();
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        let mut t = [[0; 3]; 3];
        for (a, row) in t.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = m[b][a];
            }
        }
        RotationMatrix(t)
    }

    pub fn mul(&self, rhs: &RotationMatrix) -> Self {
        let mut out = [[0; 3]; 3];
        for (a, row) in out.iter_mut().enumerate() {
            for (b, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[a][k] * rhs.0[k][b]).sum();
            }
        }
        RotationMatrix(out)
    }

    pub fn determinant(&self) -> i32 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// For output axis `a`, the source axis and sign `(b, M[a][b])`.
    pub fn source_of(&self, a: usize) -> (usize, i32) {
        let b = (0..3)
            .find(|&b| self.0[a][b] != 0)
            .expect("signed permutation row has a nonzero entry");
        (b, self.0[a][b])
    }
}

/// Composes the chain through quaternions (first listed applied first) and
/// rounds the resulting rotation matrix to integers.
pub fn quat_chain_to_matrix(rotations: &[AxisRotation]) -> Result<RotationMatrix> {
    let mut q = Quaternion::IDENTITY;
    for r in rotations {
        r.validate()?;
        q = r.quaternion().mul(&q).normalized();
    }
    let m = q.to_matrix();
    let mut out = [[0i32; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let v = m[a][b].round();
            debug_assert!((m[a][b] - v).abs() < 1e-9);
            out[a][b] = v as i32;
        }
    }
    Ok(RotationMatrix(out))
}
