//! Index rotation of feature tensors.
//!
//! A right-angle rotation matrix is applied to the (i, j, k) index of every
//! element of the first three axes, the rotated indices are shifted so the
//! smallest one is zero on every axis, and the values are gathered from their
//! old positions into the rotated output. Axes beyond the third are carried
//! along unchanged.

use serde::{Deserialize, Serialize};

use super::quaternion::{quat_chain_to_matrix, AxisRotation, RotationMatrix};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    X,
    Y,
    Z,
}

/// What one tensor axis means in the vehicle frame.
///
/// `positive` tells whether increasing index moves along (`true`) or against
/// the VCS direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisLabel {
    Spatial {
        dir: Direction,
        positive: bool,
    },
    /// Feature axis; `along` is the VCS direction the features were
    /// accumulated over (depth for a camera, height for stacked voxels).
    Channel {
        along: Option<Direction>,
        positive: bool,
    },
}

impl AxisLabel {
    pub const fn spatial(dir: Direction, positive: bool) -> Self {
        AxisLabel::Spatial { dir, positive }
    }

    pub const fn channel(along: Option<Direction>) -> Self {
        AxisLabel::Channel { along, positive: true }
    }

    pub fn direction(&self) -> Option<Direction> {
        match *self {
            AxisLabel::Spatial { dir, .. } => Some(dir),
            AxisLabel::Channel { along, .. } => along,
        }
    }

    pub fn is_positive(&self) -> bool {
        match *self {
            AxisLabel::Spatial { positive, .. } | AxisLabel::Channel { positive, .. } => positive,
        }
    }

    pub fn is_channel(&self) -> bool {
        matches!(self, AxisLabel::Channel { .. })
    }

    fn flipped(self) -> Self {
        match self {
            AxisLabel::Spatial { dir, positive } => AxisLabel::Spatial {
                dir,
                positive: !positive,
            },
            AxisLabel::Channel { along, positive } => AxisLabel::Channel {
                along,
                positive: !positive,
            },
        }
    }
}

/// Dense tensor tagged with the vehicle-frame meaning of each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedTensor {
    pub data: Tensor,
    pub labels: Vec<AxisLabel>,
}

impl OrientedTensor {
    pub fn new(data: Tensor, labels: Vec<AxisLabel>) -> Result<Self> {
        if labels.len() != data.rank() {
            return Err(Error::Shape(format!(
                "{} axis labels for a rank-{} tensor",
                labels.len(),
                data.rank()
            )));
        }
        let mut seen = Vec::new();
        for d in labels.iter().filter_map(AxisLabel::direction) {
            if seen.contains(&d) {
                return Err(Error::Shape(format!("direction {d:?} labels two axes")));
            }
            seen.push(d);
        }
        Ok(OrientedTensor { data, labels })
    }

    /// Labels of an image feature map `(rows, cols, features)`: rows run
    /// downward (-Z), columns run rightward (-Y), features span depth (X).
    pub fn camera_labels() -> Vec<AxisLabel> {
        vec![
            AxisLabel::spatial(Direction::Z, false),
            AxisLabel::spatial(Direction::Y, false),
            AxisLabel::channel(Some(Direction::X)),
        ]
    }

    /// Labels of a BEV grid `(x cells, y cells, features)` whose features
    /// were stacked over height.
    pub fn bev_labels() -> Vec<AxisLabel> {
        vec![
            AxisLabel::spatial(Direction::X, true),
            AxisLabel::spatial(Direction::Y, true),
            AxisLabel::channel(Some(Direction::Z)),
        ]
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// True when axis 0 runs forward, axis 1 runs left and axis 2 is the
    /// vertical axis (either sign), the layout of a radar BEV tensor.
    pub fn is_bev_aligned(&self) -> bool {
        self.labels.len() >= 3
            && self.labels[0].direction() == Some(Direction::X)
            && self.labels[0].is_positive()
            && self.labels[1].direction() == Some(Direction::Y)
            && self.labels[1].is_positive()
            && self.labels[2].direction() == Some(Direction::Z)
    }
}

/// Everything needed to perform one index rotation on a given shape.
#[derive(Clone, Debug)]
pub struct RotationLayout {
    pub matrix: RotationMatrix,
    pub offset: [i64; 3],
    pub out_shape: Vec<usize>,
    /// For every output element (row-major), the flat offset of its source.
    pub gather: Vec<usize>,
}

/// Builds the gather map for rotating a tensor of `shape` by `matrix`.
pub fn rotation_index_map(shape: &[usize], matrix: RotationMatrix) -> Result<RotationLayout> {
    if shape.len() < 3 {
        return Err(Error::RankTooLow(shape.len()));
    }
    let m = &matrix.0;
    let mut offset = [0i64; 3];
    let mut rot_shape = [0usize; 3];
    for a in 0..3 {
        let mut lo = 0i64;
        for b in 0..3 {
            lo += (m[a][b] as i64 * (shape[b] as i64 - 1)).min(0);
            rot_shape[a] += m[a][b].unsigned_abs() as usize * shape[b];
        }
        offset[a] = -lo;
    }
    let inner: usize = shape[3..].iter().product();
    let in_strides = [shape[1] * shape[2] * inner, shape[2] * inner, inner];
    let inv = matrix.transpose();

    let mut out_shape = rot_shape.to_vec();
    out_shape.extend_from_slice(&shape[3..]);
    let total: usize = out_shape.iter().product();
    let mut gather = Vec::with_capacity(total);
    for q0 in 0..rot_shape[0] {
        for q1 in 0..rot_shape[1] {
            for q2 in 0..rot_shape[2] {
                let q = [q0 as i64 - offset[0], q1 as i64 - offset[1], q2 as i64 - offset[2]];
                let p = inv.apply(q);
                let base: usize = (0..3).map(|a| p[a] as usize * in_strides[a]).sum();
                gather.extend(base..base + inner);
            }
        }
    }
    Ok(RotationLayout {
        matrix,
        offset,
        out_shape,
        gather,
    })
}

/// Rotates the first three axes of `t` by the composed `rotations`.
pub fn cdsm_rotate(t: &OrientedTensor, rotations: &[AxisRotation]) -> Result<OrientedTensor> {
    if t.data.rank() < 3 {
        return Err(Error::RankTooLow(t.data.rank()));
    }
    let matrix = quat_chain_to_matrix(rotations)?;
    let layout = rotation_index_map(t.shape(), matrix)?;
    let src = t.data.data();
    let values = layout.gather.iter().map(|&i| src[i]).collect();
    let data = Tensor::from_vec(&layout.out_shape, values)?;
    OrientedTensor::new(data, rotate_labels(&t.labels, matrix))
}

/// Axis labels after rotating the first three axes by `matrix`.
pub fn rotate_labels(labels: &[AxisLabel], matrix: RotationMatrix) -> Vec<AxisLabel> {
    let mut out = labels.to_vec();
    for (a, label) in out.iter_mut().enumerate().take(3) {
        let (b, sign) = matrix.source_of(a);
        *label = if sign < 0 { labels[b].flipped() } else { labels[b] };
    }
    out
}
