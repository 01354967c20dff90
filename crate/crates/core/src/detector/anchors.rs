use serde::{Deserialize, Serialize};

use crate::cdsm::BevGrid;
use crate::{Error, Result};

/// Anchors per grid cell.
pub const ANCHORS_PER_CELL: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Anchor3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Anchor3D {
    pub fn diagonal(&self) -> f64 {
        self.length.hypot(self.width)
    }
}

/// Length-to-width ratio and yaw of one 3D anchor shape.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeHypothesis {
    pub ratio: f64,
    pub yaw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub scales: [f64; 3],
    pub ratios: [f64; 3],
    /// 2D base size as a multiple of the level stride.
    pub base_stride_factor: f64,
    /// 3D base size in meters, shared by all BEV levels.
    pub base_size_3d: f64,
    pub shapes_3d: [ShapeHypothesis; 3],
    pub z_center: f64,
    pub height: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            scales: [1.0, 2f64.powf(1.0 / 3.0), 2f64.powf(2.0 / 3.0)],
            ratios: [0.5, 1.0, 2.0],
            base_stride_factor: 4.0,
            base_size_3d: 3.0,
            shapes_3d: [
                ShapeHypothesis { ratio: 2.0, yaw: 0.0 },
                ShapeHypothesis {
                    ratio: 2.0,
                    yaw: std::f64::consts::FRAC_PI_2,
                },
                ShapeHypothesis { ratio: 1.0, yaw: 0.0 },
            ],
            z_center: 0.8,
            height: 1.6,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self
            .scales
            .iter()
            .chain(&self.ratios)
            .chain(self.shapes_3d.iter().map(|s| &s.ratio))
            .chain([&self.base_stride_factor, &self.base_size_3d, &self.height])
            .all(|&v| v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::Config("anchor sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Anchors of an image level with `rows × cols` cells of `stride` pixels,
/// ordered by cell (row-major) then scale-major within the cell.
pub fn generate_anchors_2d(rows: usize, cols: usize, stride: usize, cfg: &AnchorConfig) -> Vec<Anchor2D> {
    let base = cfg.base_stride_factor * stride as f64;
    let mut out = Vec::with_capacity(rows * cols * ANCHORS_PER_CELL);
    for r in 0..rows {
        for c in 0..cols {
            let cx = (c as f64 + 0.5) * stride as f64;
            let cy = (r as f64 + 0.5) * stride as f64;
            for &s in &cfg.scales {
                for &ratio in &cfg.ratios {
                    let q = ratio.sqrt();
                    out.push(Anchor2D {
                        cx,
                        cy,
                        w: base * s / q,
                        h: base * s * q,
                    });
                }
            }
        }
    }
    out
}

/// Anchors of a BEV level with `nx × ny` cells covering `grid`'s footprint,
/// ordered by cell (`ix` major) then scale-major within the cell.
pub fn generate_anchors_3d(nx: usize, ny: usize, grid: &BevGrid, cfg: &AnchorConfig) -> Vec<Anchor3D> {
    let level = BevGrid { nx, ny, ..*grid };
    let mut out = Vec::with_capacity(nx * ny * ANCHORS_PER_CELL);
    for ix in 0..nx {
        for iy in 0..ny {
            let (x, y) = level.cell_center(ix, iy);
            for &s in &cfg.scales {
                for shape in &cfg.shapes_3d {
                    let q = shape.ratio.sqrt();
                    out.push(Anchor3D {
                        x,
                        y,
                        z: cfg.z_center,
                        length: cfg.base_size_3d * s * q,
                        width: cfg.base_size_3d * s / q,
                        height: cfg.height,
                        yaw: shape.yaw,
                    });
                }
            }
        }
    }
    out
}
