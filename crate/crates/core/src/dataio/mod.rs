//! Scenes, labels and the preprocessing applied before the network.

mod boxes;
mod io;
mod nuscenes;
mod preprocess;
mod stats;
mod synth;

pub use boxes::{Box2D, Box3D};
pub use io::{load_detections, load_scene, save_detections, save_scene, scene_paths, DetectionFile};
pub use nuscenes::{load_nuscenes_export, NuScenesExport};
pub use preprocess::{clip_pointcloud, filter_labels, letterbox, FilterMode, LetterboxTransform};
pub use stats::{dataset_stats, ClassStats, DatasetStats};
pub use synth::{generate_synthetic_scene, SynthConfig, SynthReport};

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraCalib, VcsPoint};
use crate::{Error, Result};

/// The only object class the detectors are trained for.
pub const CAR: u32 = 0;

/// One radar return in the vehicle frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: VcsPoint,
    /// Velocity, m/s.
    pub vx: f64,
    pub vy: f64,
    /// Radar cross-section, dBsm-like.
    pub rcs: f64,
}

/// Ground-truth object with per-sensor evidence counts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    #[serde(rename = "box")]
    pub box3d: Box3D,
    /// Fraction of the object visible in the camera image, `[0, 1]`.
    pub visibility: f64,
    pub n_lidar_points: u32,
    pub n_radar_points: u32,
}

impl Label {
    pub fn class_id(&self) -> u32 {
        self.box3d.class_id
    }
}

/// RGB image, row-major `(height, width, 3)`, values in `[0, 1]`.
///
/// Values are kept on the 16-bit grid `k / 65535` so that the lossless PNG
/// storage round-trips exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub(crate) const PIXEL_LEVELS: f64 = 65535.0;

pub(crate) fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * PIXEL_LEVELS).round() / PIXEL_LEVELS
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("zero-size image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let data = data.into_iter().map(quantize).collect();
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let px = rgb.map(quantize);
        let data = (0..width * height).flat_map(|_| px).collect();
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let o = (y * self.width + x) * 3;
        for (d, v) in self.data[o..o + 3].iter_mut().zip(rgb) {
            *d = quantize(v);
        }
    }
}

/// One synchronized sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Image,
    pub points: Vec<RadarPoint>,
    /// Reference LiDAR points, kept for rendering only.
    pub lidar: Vec<VcsPoint>,
    pub calib: CameraCalib,
    pub labels: Vec<Label>,
}
