//! Vehicle coordinate system (VCS), rotations, index rotation of feature
//! tensors and pinhole projection.
//!
//! The VCS sits on the front axle with X forward, Y to the left and Z up.

mod camera;
mod quaternion;
mod rotate;

pub use camera::{cuboid_to_bbox2d, project_to_image, CameraCalib, Pose, Projection};
pub use quaternion::{inverse_chain, quat_chain_to_matrix, AxisRotation, Quaternion, RotationMatrix, CAMERA_TO_BEV};
pub use rotate::{
    cdsm_rotate, rotate_labels, rotation_index_map, AxisLabel, Direction, OrientedTensor, RotationLayout,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A point in the vehicle frame, meters.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct VcsPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl VcsPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        VcsPoint { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        VcsPoint::new(a[0], a[1], a[2])
    }

    pub fn planar_distance(&self, other: &VcsPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance(&self, other: &VcsPoint) -> f64 {
        let dz = self.z - other.z;
        (self.planar_distance(other).powi(2) + dz * dz).sqrt()
    }
}

/// Axis-aligned region of interest in the vehicle frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FovBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for FovBox {
    fn default() -> Self {
        FovBox {
            x_min: 0.0,
            x_max: 80.0,
            y_min: -40.0,
            y_max: 40.0,
            z_min: 0.0,
            z_max: 5.0,
        }
    }
}

impl FovBox {
    pub fn validate(&self) -> Result<()> {
        let ok = self.x_min < self.x_max && self.y_min < self.y_max && self.z_min < self.z_max;
        if !ok {
            return Err(Error::Config(format!("degenerate FOV box {self:?}")));
        }
        Ok(())
    }

    pub fn min(&self) -> [f64; 3] {
        [self.x_min, self.y_min, self.z_min]
    }

    pub fn max(&self) -> [f64; 3] {
        [self.x_max, self.y_max, self.z_max]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.x_max - self.x_min,
            self.y_max - self.y_min,
            self.z_max - self.z_min,
        ]
    }
}

/// Half-open containment `[min, max)` on every axis.
pub fn in_fov(p: &VcsPoint, fov: &FovBox) -> bool {
    (fov.x_min..fov.x_max).contains(&p.x)
        && (fov.y_min..fov.y_max).contains(&p.y)
        && (fov.z_min..fov.z_max).contains(&p.z)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    // rem_euclid can return exactly 2π for tiny negative inputs
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}
