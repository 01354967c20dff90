//! Scene and detection files.
//!
//! A scene is a JSON document `scene_<id>.json` next to a 16-bit RGB PNG
//! `scene_<id>.png`. Floats are written in shortest round-trip form, so every
//! numeric field reloads bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Box2D, Box3D, Image, Label, RadarPoint, Scene, PIXEL_LEVELS};
use crate::geometry::{CameraCalib, VcsPoint};
use crate::{Error, Result};

pub const SCENE_FORMAT: &str = "cdsm-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ImageRef {
    file: String,
    width: usize,
    height: usize,
}

#[derive(Serialize, Deserialize)]
struct SceneDoc {
    format: String,
    version: u32,
    id: String,
    image: ImageRef,
    calib: CameraCalib,
    radar: Vec<RadarPoint>,
    lidar: Vec<[f64; 3]>,
    labels: Vec<Label>,
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

fn image_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `path` (the JSON document) and the PNG beside it.
pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    let png = path.with_extension("png");
    let file = png
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| Error::Config(format!("bad scene path {}", path.display())))?
        .to_string();
    let doc = SceneDoc {
        format: SCENE_FORMAT.into(),
        version: SCENE_VERSION,
        id: scene.id.clone(),
        image: ImageRef {
            file,
            width: scene.image.width(),
            height: scene.image.height(),
        },
        calib: scene.calib,
        radar: scene.points.clone(),
        lidar: scene.lidar.iter().map(|p| p.to_array()).collect(),
        labels: scene.labels.clone(),
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| json_error(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))?;

    let raw: Vec<u16> = scene
        .image
        .data()
        .iter()
        .map(|&v| (v * PIXEL_LEVELS).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(
        scene.image.width() as u32,
        scene.image.height() as u32,
        raw,
    )
    .ok_or_else(|| image_error(&png, "buffer size mismatch"))?;
    buf.save_with_format(&png, image::ImageFormat::Png)
        .map_err(|e| image_error(&png, e))
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: SceneDoc = serde_json::from_str(&text).map_err(|e| json_error(path, e))?;
    if doc.format != SCENE_FORMAT || doc.version != SCENE_VERSION {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: "header".into(),
            message: format!("unsupported format {} v{}", doc.format, doc.version),
        });
    }
    let png = path.with_file_name(&doc.image.file);
    let img = image::open(&png).map_err(|e| image_error(&png, e))?.into_rgb16();
    if (img.width() as usize, img.height() as usize) != (doc.image.width, doc.image.height) {
        return Err(image_error(&png, "dimensions disagree with scene document"));
    }
    let data = img.into_raw().into_iter().map(|v| v as f64 / PIXEL_LEVELS).collect();
    Ok(Scene {
        id: doc.id,
        image: Image::new(doc.image.width, doc.image.height, data)?,
        points: doc.radar,
        lidar: doc.lidar.into_iter().map(VcsPoint::from_array).collect(),
        calib: doc.calib,
        labels: doc.labels,
    })
}

/// Scene documents in `dir`, sorted by file name.
pub fn scene_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("scene_") && name.ends_with(".json") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Detections for one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub scene_id: String,
    #[serde(default)]
    pub boxes3d: Vec<Box3D>,
    #[serde(default)]
    pub boxes2d: Vec<Box2D>,
}

pub fn save_detections(dets: &DetectionFile, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(dets).map_err(|e| json_error(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: &Path) -> Result<DetectionFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic_scene, SynthConfig};

    #[test]
    fn scene_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (scene, _) = generate_synthetic_scene(9, &SynthConfig::tiny());
        let path = dir.path().join("scene_0009.json");
        save_scene(&scene, &path).unwrap();
        assert_eq!(load_scene(&path).unwrap(), scene);
        assert_eq!(scene_paths(dir.path()).unwrap(), vec![path]);
    }

    #[test]
    fn malformed_document_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene_bad.json");
        fs::write(&path, "{\n  \"format\": \"cdsm-scene\",\n  \"version\": oops\n}").unwrap();
        match load_scene(&path) {
            Err(Error::Parse { location, .. }) => assert!(location.contains("line 3"), "{location}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn detections_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = DetectionFile {
            scene_id: "x".into(),
            boxes3d: vec![Box3D::new(VcsPoint::new(1.0, 2.0, 0.5), 4.0, 2.0, 1.5, 0.3, 0).with_score(0.7)],
            boxes2d: vec![],
        };
        let p = dir.path().join("d.json");
        save_detections(&d, &p).unwrap();
        assert_eq!(load_detections(&p).unwrap(), d);
    }
}
