//! Radar voxel grid, voxel feature extractor and Z stacking.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{in_fov, AxisLabel, Direction, OrientedTensor};
use crate::tensornet::{Activation, Conv, ParamBuilder, Tape, Var, NO_SOURCE};
use crate::{Error, FovBox, RadarPoint, Result, Tensor};

/// Values per point fed to the feature extractor:
/// `x, y, z, vx, vy, rcs` and the offset from the voxel center.
pub const POINT_FEATURES: usize = 9;

/// Fixed per-feature divisors applied before the learned transform.
pub const FEATURE_SCALE: [f64; POINT_FEATURES] = [80.0, 40.0, 5.0, 10.0, 10.0, 20.0, 0.5, 0.5, 0.5];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoxelGridSpec {
    pub fov: FovBox,
    pub voxel_size: [f64; 3],
    pub max_points_per_voxel: usize,
}

impl Default for VoxelGridSpec {
    fn default() -> Self {
        VoxelGridSpec {
            fov: FovBox::default(),
            voxel_size: [1.0, 1.0, 1.0],
            max_points_per_voxel: 5,
        }
    }
}

impl VoxelGridSpec {
    pub fn validate(&self) -> Result<()> {
        self.fov.validate()?;
        if self.max_points_per_voxel == 0 {
            return Err(Error::Config("max_points_per_voxel must be at least 1".into()));
        }
        for (a, (&e, &s)) in self.fov.extent().iter().zip(&self.voxel_size).enumerate() {
            let n = e / s;
            if s.is_nan() || s <= 0.0 || (n - n.round()).abs() > 1e-9 || n.round() < 1.0 {
                return Err(Error::Config(format!(
                    "voxel size {s} does not divide the FOV extent {e} on axis {a}"
                )));
            }
        }
        Ok(())
    }

    /// Cells per axis.
    pub fn dims(&self) -> [usize; 3] {
        let e = self.fov.extent();
        std::array::from_fn(|a| (e[a] / self.voxel_size[a]).round() as usize)
    }

    /// Cell index of a point, without bounds checks.
    pub fn cell_of(&self, p: [f64; 3]) -> [i64; 3] {
        let min = self.fov.min();
        std::array::from_fn(|a| ((p[a] - min[a]) / self.voxel_size[a]).floor() as i64)
    }

    pub fn cell_center(&self, cell: [usize; 3]) -> [f64; 3] {
        let min = self.fov.min();
        std::array::from_fn(|a| min[a] + (cell[a] as f64 + 0.5) * self.voxel_size[a])
    }
}

/// Occupied voxels in ascending `(ix, iy, iz)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelizedSample {
    pub dims: [usize; 3],
    pub indices: Vec<[usize; 3]>,
    /// `(voxels, max_points, POINT_FEATURES)`, zero past each valid count.
    pub features: Tensor,
    pub counts: Vec<usize>,
}

impl VoxelizedSample {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_points(&self) -> usize {
        self.features.shape()[1]
    }

    /// Valid feature rows of voxel `v`.
    pub fn points(&self, v: usize) -> impl Iterator<Item = &[f64]> {
        let m = self.max_points();
        self.features.data()[v * m * POINT_FEATURES..]
            .chunks_exact(POINT_FEATURES)
            .take(self.counts[v])
    }
}

pub fn point_features(p: &RadarPoint, center: [f64; 3]) -> [f64; POINT_FEATURES] {
    let q = p.position;
    [
        q.x,
        q.y,
        q.z,
        p.vx,
        p.vy,
        p.rcs,
        q.x - center[0],
        q.y - center[1],
        q.z - center[2],
    ]
}

/// Bins points into the grid. When a voxel overflows, the first points in
/// input order are kept.
pub fn voxelize(points: &[RadarPoint], spec: &VoxelGridSpec) -> Result<VoxelizedSample> {
    spec.validate()?;
    let dims = spec.dims();
    let mut cells: BTreeMap<[usize; 3], Vec<usize>> = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        if !p.position.is_finite() || !in_fov(&p.position, &spec.fov) {
            return Err(Error::OutsideFov { index: i });
        }
        let c = spec.cell_of(p.position.to_array());
        let c: [usize; 3] = std::array::from_fn(|a| (c[a].max(0) as usize).min(dims[a] - 1));
        let list = cells.entry(c).or_default();
        if list.len() < spec.max_points_per_voxel {
            list.push(i);
        }
    }
    let m = spec.max_points_per_voxel;
    let mut features = Tensor::zeros(&[cells.len(), m, POINT_FEATURES]);
    let mut indices = Vec::with_capacity(cells.len());
    let mut counts = Vec::with_capacity(cells.len());
    for (v, (cell, list)) in cells.into_iter().enumerate() {
        let center = spec.cell_center(cell);
        for (k, &i) in list.iter().enumerate() {
            let f = point_features(&points[i], center);
            let off = (v * m + k) * POINT_FEATURES;
            features.data_mut()[off..off + POINT_FEATURES].copy_from_slice(&f);
        }
        indices.push(cell);
        counts.push(list.len());
    }
    Ok(VoxelizedSample {
        dims,
        indices,
        features,
        counts,
    })
}

/// Shared per-point affine map and activation, max-pooled over each voxel's
/// valid points.
#[derive(Clone, Debug)]
pub struct Vfe {
    pub linear: Conv,
    pub width: usize,
}

impl Vfe {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize) -> Result<Self> {
        Ok(Vfe {
            linear: Conv::new(pb, name, 1, POINT_FEATURES, width, 1, true)?,
            width,
        })
    }

    /// Per-voxel features, `(voxels, width)`.
    pub fn forward(&self, tape: &mut Tape, sample: &VoxelizedSample) -> Result<Var> {
        let m = sample.max_points();
        let total: usize = sample.counts.iter().sum();
        let mut rows = Vec::with_capacity(total * POINT_FEATURES);
        let mut segments = Vec::with_capacity(sample.len());
        for (v, &count) in sample.counts.iter().enumerate() {
            if count == 0 {
                return Err(Error::Shape(format!("voxel {v} has no valid points")));
            }
            segments.push((rows.len() / POINT_FEATURES, count));
            for k in 0..count {
                let off = (v * m + k) * POINT_FEATURES;
                let f = &sample.features.data()[off..off + POINT_FEATURES];
                rows.extend(f.iter().zip(FEATURE_SCALE).map(|(x, s)| x / s));
            }
        }
        let x = tape.input(Tensor::from_vec(&[total, 1, POINT_FEATURES], rows)?);
        let y = self.linear.forward(tape, x)?;
        let y = Activation::LeakyRelu.apply(tape, y);
        let y = tape.reshape(y, &[total, self.width])?;
        tape.segment_max(y, &segments)
    }
}

/// Gather map from `(voxels, width)` features to the stacked
/// `(X, Y, Z·width)` grid; channel block `iz` holds voxel layer `iz`.
pub fn stack_z_index(sample: &VoxelizedSample, width: usize) -> Vec<usize> {
    let [nx, ny, nz] = sample.dims;
    let mut index = vec![NO_SOURCE; nx * ny * nz * width];
    for (v, &[ix, iy, iz]) in sample.indices.iter().enumerate() {
        let base = ((ix * ny + iy) * nz + iz) * width;
        for f in 0..width {
            index[base + f] = v * width + f;
        }
    }
    index
}

pub fn stack_z_labels() -> Vec<AxisLabel> {
    vec![
        AxisLabel::spatial(Direction::X, true),
        AxisLabel::spatial(Direction::Y, true),
        AxisLabel::channel(Some(Direction::Z)),
    ]
}

/// Dense BEV input on the tape.
pub fn stack_z(tape: &mut Tape, sample: &VoxelizedSample, features: Var) -> Result<Var> {
    let width = match tape.shape(features) {
        [v, w] if *v == sample.len() => *w,
        s => {
            return Err(Error::Shape(format!(
                "voxel features {s:?} for {} voxels",
                sample.len()
            )))
        }
    };
    let [nx, ny, nz] = sample.dims;
    let index = Arc::new(stack_z_index(sample, width));
    tape.gather(features, index, &[nx, ny, nz * width])
}

/// Dense BEV tensor from precomputed `(voxels, width)` features.
pub fn stack_z_tensor(sample: &VoxelizedSample, features: &Tensor) -> Result<OrientedTensor> {
    let store = crate::tensornet::ParamStore::new();
    let mut tape = Tape::new(&store);
    let f = tape.input(features.clone());
    let out = stack_z(&mut tape, sample, f)?;
    OrientedTensor::new(tape.value(out).clone(), stack_z_labels())
}
