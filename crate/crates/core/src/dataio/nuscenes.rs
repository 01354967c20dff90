//! Adapter for samples exported from the NuScenes devkit.
//!
//! The expected input is one JSON document per sample with the front camera
//! intrinsics, its camera-to-ego pose, radar and LiDAR points already
//! transformed into the ego frame, and the sample annotations:
//!
//! ```json
//! {
//!   "sample_token": "…",
//!   "image_file": "CAM_FRONT/….jpg",
//!   "intrinsic": [[fx, 0, cx], [0, fy, cy], [0, 0, 1]],
//!   "camera_to_ego": { "rotation": [w, x, y, z], "translation": [x, y, z] },
//!   "radar_points": [[x, y, z, vx_comp, vy_comp, rcs], …],
//!   "lidar_points": [[x, y, z], …],
//!   "annotations": [{ "category": "vehicle.car", "center": [x, y, z],
//!                     "size": [w, l, h], "yaw": 0.1, "visibility": "v60-80",
//!                     "num_lidar_pts": 120, "num_radar_pts": 2 }]
//! }
//! ```
//!
//! Radar velocities are passed through unchanged.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{clip_pointcloud, letterbox, Box3D, Image, Label, RadarPoint, Scene, CAR};
use crate::geometry::{in_fov, CameraCalib, FovBox, Pose, Quaternion, VcsPoint};
use crate::{Error, Result};

#[derive(Deserialize)]
pub struct NuScenesPose {
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

#[derive(Deserialize)]
pub struct NuScenesAnnotation {
    pub category: String,
    pub center: [f64; 3],
    /// Width, length, height as in the devkit.
    pub size: [f64; 3],
    pub yaw: f64,
    pub visibility: String,
    pub num_lidar_pts: u32,
    pub num_radar_pts: u32,
}

#[derive(Deserialize)]
pub struct NuScenesExport {
    pub sample_token: String,
    pub image_file: String,
    pub intrinsic: [[f64; 3]; 3],
    pub camera_to_ego: NuScenesPose,
    pub radar_points: Vec<[f64; 6]>,
    #[serde(default)]
    pub lidar_points: Vec<[f64; 3]>,
    pub annotations: Vec<NuScenesAnnotation>,
}

/// Midpoint of a devkit visibility bin.
fn visibility_fraction(token: &str) -> f64 {
    match token {
        "v0-40" | "1" => 0.2,
        "v40-60" | "2" => 0.5,
        "v60-80" | "3" => 0.7,
        "v80-100" | "4" => 0.9,
        _ => 0.0,
    }
}

/// Loads one exported sample, letterboxes the image to `target` and clips
/// both pointclouds to `fov`.
pub fn load_nuscenes_export(path: &Path, target: (usize, usize), fov: &FovBox) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ex: NuScenesExport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let img_path = path.with_file_name(&ex.image_file);
    let rgb = image::open(&img_path)
        .map_err(|e| Error::Image {
            path: img_path.clone(),
            message: e.to_string(),
        })?
        .into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    let image = Image::new(w, h, data)?;
    let (image, lb) = letterbox(&image, target.0, target.1)?;

    // optical frame (x right, y down, z forward) to camera body frame
    // (x forward, y left, z up)
    let [w0, x0, y0, z0] = ex.camera_to_ego.rotation;
    let cam_to_ego = Quaternion {
        w: w0,
        x: x0,
        y: y0,
        z: z0,
    }
    .normalized();
    let body_to_optical = Quaternion {
        w: 0.5,
        x: 0.5,
        y: -0.5,
        z: 0.5,
    };
    let calib = CameraCalib {
        fx: ex.intrinsic[0][0],
        fy: ex.intrinsic[1][1],
        cx: ex.intrinsic[0][2],
        cy: ex.intrinsic[1][2],
        pose: Pose {
            rotation: cam_to_ego.mul(&body_to_optical).normalized(),
            translation: VcsPoint::from_array(ex.camera_to_ego.translation),
        },
    }
    .resized(lb.scale, lb.pad_x, lb.pad_y);

    let radar: Vec<RadarPoint> = ex
        .radar_points
        .iter()
        .map(|p| RadarPoint {
            position: VcsPoint::new(p[0], p[1], p[2]),
            vx: p[3],
            vy: p[4],
            rcs: p[5],
        })
        .collect();
    let lidar = ex
        .lidar_points
        .iter()
        .map(|&p| VcsPoint::from_array(p))
        .filter(|p| in_fov(p, fov))
        .collect();
    let labels = ex
        .annotations
        .iter()
        .map(|a| {
            let class = if a.category.starts_with("vehicle.car") { CAR } else { 1 };
            Label {
                box3d: Box3D::new(
                    VcsPoint::from_array(a.center),
                    a.size[1],
                    a.size[0],
                    a.size[2],
                    a.yaw,
                    class,
                ),
                visibility: visibility_fraction(&a.visibility),
                n_lidar_points: a.num_lidar_pts,
                n_radar_points: a.num_radar_pts,
            }
        })
        .collect();
    Ok(Scene {
        id: ex.sample_token,
        image,
        points: clip_pointcloud(&radar, fov),
        lidar,
        calib,
        labels,
    })
}
