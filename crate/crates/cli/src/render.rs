//! Camera-overlay and BEV images of detections against ground truth.
//!
//! Predictions are blue, false detections magenta, matched targets green and
//! missed targets yellow.

use std::path::Path;

use cdsm_core::dataio::Image;
use cdsm_core::evaluator::{associate_2d, associate_3d, Association, AssociationSpec};
use cdsm_core::geometry::project_to_image;
use cdsm_core::{Box2D, Box3D, Error, FovBox, Scene};
use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_rect_mut, draw_hollow_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

pub const PREDICTION: Rgb<u8> = Rgb([0, 0, 255]);
pub const FALSE_DETECTION: Rgb<u8> = Rgb([255, 0, 255]);
pub const MATCHED_TARGET: Rgb<u8> = Rgb([0, 255, 0]);
pub const MISSED_TARGET: Rgb<u8> = Rgb([255, 255, 0]);

const BEV_BACKGROUND: Rgb<u8> = Rgb([24, 24, 24]);
const BEV_GRID: Rgb<u8> = Rgb([56, 56, 56]);
const LIDAR: Rgb<u8> = Rgb([110, 110, 110]);
const RADAR: Rgb<u8> = Rgb([255, 255, 255]);
const BEV_PX_PER_M: f64 = 6.0;

/// Outline colors of predictions and labels after association.
pub struct Coloring {
    pub preds: Vec<Rgb<u8>>,
    pub labels: Vec<Rgb<u8>>,
}

impl Coloring {
    pub fn from_association(a: &Association, num_labels: usize) -> Self {
        let preds = a
            .pred_matched
            .iter()
            .map(|&m| if m { PREDICTION } else { FALSE_DETECTION })
            .collect();
        let mut labels = vec![MATCHED_TARGET; num_labels];
        for &l in &a.unmatched_labels {
            labels[l] = MISSED_TARGET;
        }
        Coloring { preds, labels }
    }

    pub fn boxes_3d(preds: &[Box3D], labels: &[Box3D], spec: &AssociationSpec) -> Self {
        Self::from_association(&associate_3d(preds, labels, spec), labels.len())
    }

    pub fn boxes_2d(preds: &[Box2D], labels: &[Box2D], spec: &AssociationSpec) -> Self {
        Self::from_association(&associate_2d(preds, labels, spec), labels.len())
    }
}

fn to_rgb(image: &Image) -> RgbImage {
    let mut out = RgbImage::new(image.width() as u32, image.height() as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let v = image.pixel(x as usize, y as usize);
        *px = Rgb(v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

fn thick_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    for (dx, dy) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)] {
        draw_line_segment_mut(img, (a.0 + dx, a.1 + dy), (b.0 + dx, b.1 + dy), color);
    }
}

fn draw_box_2d(img: &mut RgbImage, b: &Box2D, color: Rgb<u8>) {
    let (x0, y0) = (b.u_min.round() as i32, b.v_min.round() as i32);
    let (w, h) = (b.width().round().max(1.0) as u32, b.height().round().max(1.0) as u32);
    draw_hollow_rect_mut(img, Rect::at(x0, y0).of_size(w, h), color);
    if w > 2 && h > 2 {
        draw_hollow_rect_mut(img, Rect::at(x0 + 1, y0 + 1).of_size(w - 2, h - 2), color);
    }
}

fn draw_cuboid(img: &mut RgbImage, b: &Box3D, scene: &Scene, color: Rgb<u8>) {
    let corners: Option<Vec<(f32, f32)>> = b
        .corners()
        .iter()
        .map(|c| project_to_image(c, &scene.calib).ok().map(|p| (p.u as f32, p.v as f32)))
        .collect();
    if let Some(c) = corners {
        for (i, j) in Box3D::EDGES {
            thick_line(img, c[i], c[j], color);
        }
    }
}

/// Scene image with 2D boxes drawn on top.
pub fn camera_overlay_2d(scene: &Scene, preds: &[Box2D], labels: &[Box2D], colors: &Coloring) -> RgbImage {
    let mut img = to_rgb(&scene.image);
    for (b, &c) in labels.iter().zip(&colors.labels) {
        draw_box_2d(&mut img, b, c);
    }
    for (b, &c) in preds.iter().zip(&colors.preds) {
        draw_box_2d(&mut img, b, c);
    }
    img
}

/// Scene image with projected cuboids drawn on top.
pub fn camera_overlay_3d(scene: &Scene, preds: &[Box3D], labels: &[Box3D], colors: &Coloring) -> RgbImage {
    let mut img = to_rgb(&scene.image);
    for (b, &c) in labels.iter().zip(&colors.labels) {
        draw_cuboid(&mut img, b, scene, c);
    }
    for (b, &c) in preds.iter().zip(&colors.preds) {
        draw_cuboid(&mut img, b, scene, c);
    }
    img
}

struct BevCanvas {
    img: RgbImage,
    fov: FovBox,
}

impl BevCanvas {
    fn new(fov: FovBox) -> Self {
        let w = ((fov.y_max - fov.y_min) * BEV_PX_PER_M).ceil() as u32;
        let h = ((fov.x_max - fov.x_min) * BEV_PX_PER_M).ceil() as u32;
        let mut c = BevCanvas {
            img: RgbImage::from_pixel(w, h, BEV_BACKGROUND),
            fov,
        };
        let mut x = (fov.x_min / 10.0).ceil() * 10.0;
        while x <= fov.x_max {
            c.line((x, fov.y_min), (x, fov.y_max), BEV_GRID);
            x += 10.0;
        }
        let mut y = (fov.y_min / 10.0).ceil() * 10.0;
        while y <= fov.y_max {
            c.line((fov.x_min, y), (fov.x_max, y), BEV_GRID);
            y += 10.0;
        }
        c
    }

    /// Forward is up, left is left.
    fn px(&self, x: f64, y: f64) -> (f32, f32) {
        (
            ((self.fov.y_max - y) * BEV_PX_PER_M) as f32,
            ((self.fov.x_max - x) * BEV_PX_PER_M) as f32,
        )
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
        let (pa, pb) = (self.px(a.0, a.1), self.px(b.0, b.1));
        draw_line_segment_mut(&mut self.img, pa, pb, color);
    }

    fn dot(&mut self, x: f64, y: f64, size: u32, color: Rgb<u8>) {
        let (u, v) = self.px(x, y);
        let r = Rect::at(u as i32 - size as i32 / 2, v as i32 - size as i32 / 2).of_size(size, size);
        draw_filled_rect_mut(&mut self.img, r, color);
    }

    fn footprint(&mut self, b: &Box3D, color: Rgb<u8>) {
        let c = b.bev_corners();
        let p: Vec<(f32, f32)> = c.iter().map(|q| self.px(q[0], q[1])).collect();
        for i in 0..4 {
            thick_line(&mut self.img, p[i], p[(i + 1) % 4], color);
        }
        let front = ((c[0][0] + c[3][0]) / 2.0, (c[0][1] + c[3][1]) / 2.0);
        let center = self.px(b.center.x, b.center.y);
        let tip = self.px(front.0, front.1);
        thick_line(&mut self.img, center, tip, color);
    }
}

/// Top-down view of the FOV with LiDAR, radar and box footprints.
pub fn bev_view(scene: &Scene, fov: &FovBox, preds: &[Box3D], labels: &[Box3D], colors: &Coloring) -> RgbImage {
    let mut c = BevCanvas::new(*fov);
    for p in &scene.lidar {
        c.dot(p.x, p.y, 1, LIDAR);
    }
    for p in &scene.points {
        c.dot(p.position.x, p.position.y, 3, RADAR);
    }
    for (b, &col) in labels.iter().zip(&colors.labels) {
        c.footprint(b, col);
    }
    for (b, &col) in preds.iter().zip(&colors.preds) {
        c.footprint(b, col);
    }
    c.img
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.into(),
        message: e.to_string(),
    })
}
