use serde::{Deserialize, Serialize};

use super::{Box2D, Image, Label, RadarPoint};
use crate::geometry::{in_fov, FovBox};
use crate::{Error, Result};

/// Uniform scale plus padding applied by [`letterbox`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterboxTransform {
    pub scale: f64,
    pub pad_x: f64,
    pub pad_y: f64,
}

impl LetterboxTransform {
    pub fn forward(&self, u: f64, v: f64) -> (f64, f64) {
        (u * self.scale + self.pad_x, v * self.scale + self.pad_y)
    }

    pub fn inverse(&self, u: f64, v: f64) -> (f64, f64) {
        ((u - self.pad_x) / self.scale, (v - self.pad_y) / self.scale)
    }

    pub fn forward_box(&self, b: &Box2D) -> Box2D {
        let (u0, v0) = self.forward(b.u_min, b.v_min);
        let (u1, v1) = self.forward(b.u_max, b.v_max);
        Box2D {
            u_min: u0,
            v_min: v0,
            u_max: u1,
            v_max: v1,
            ..*b
        }
    }

    pub fn inverse_box(&self, b: &Box2D) -> Box2D {
        let (u0, v0) = self.inverse(b.u_min, b.v_min);
        let (u1, v1) = self.inverse(b.u_max, b.v_max);
        Box2D {
            u_min: u0,
            v_min: v0,
            u_max: u1,
            v_max: v1,
            ..*b
        }
    }
}

/// Aspect-preserving resize into `target_w x target_h` with symmetric zero
/// padding. Odd leftover padding goes to the right/bottom edge.
pub fn letterbox(image: &Image, target_w: usize, target_h: usize) -> Result<(Image, LetterboxTransform)> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Shape(format!("zero letterbox target {target_w}x{target_h}")));
    }
    let (w, h) = (image.width(), image.height());
    let scale = (target_w as f64 / w as f64).min(target_h as f64 / h as f64);
    let cw = ((w as f64 * scale).round() as usize).min(target_w);
    let ch = ((h as f64 * scale).round() as usize).min(target_h);
    let px = (target_w - cw) / 2;
    let py = (target_h - ch) / 2;
    let transform = LetterboxTransform {
        scale,
        pad_x: px as f64,
        pad_y: py as f64,
    };
    if (w, h) == (target_w, target_h) {
        return Ok((image.clone(), transform));
    }
    let mut data = vec![0.0; target_w * target_h * 3];
    for y in py..py + ch {
        let sy = ((y - py) as f64 + 0.5) / scale - 0.5;
        let y0 = sy.floor().clamp(0.0, (h - 1) as f64) as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = (sy - y0 as f64).clamp(0.0, 1.0);
        for x in px..px + cw {
            let sx = ((x - px) as f64 + 0.5) / scale - 0.5;
            let x0 = sx.floor().clamp(0.0, (w - 1) as f64) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = (sx - x0 as f64).clamp(0.0, 1.0);
            let (a, b) = (image.pixel(x0, y0), image.pixel(x1, y0));
            let (c, d) = (image.pixel(x0, y1), image.pixel(x1, y1));
            let o = (y * target_w + x) * 3;
            for k in 0..3 {
                let top = a[k] * (1.0 - fx) + b[k] * fx;
                let bot = c[k] * (1.0 - fx) + d[k] * fx;
                data[o + k] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Ok((Image::new(target_w, target_h, data)?, transform))
}

/// Keeps the points inside `fov`, in their original order.
pub fn clip_pointcloud(points: &[RadarPoint], fov: &FovBox) -> Vec<RadarPoint> {
    points.iter().filter(|p| in_fov(&p.position, fov)).copied().collect()
}

/// Ground truth selection per detection task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Visible in the camera (strictly more than 40%).
    Camera2d,
    /// At least one radar return.
    Radar3d,
    /// Either of the above.
    Fusion3d,
}

pub const MIN_VISIBILITY: f64 = 0.40;

pub fn filter_labels(labels: &[Label], mode: FilterMode, class_id: u32, fov: &FovBox) -> Vec<Label> {
    labels
        .iter()
        .filter(|l| l.class_id() == class_id && in_fov(&l.box3d.center, fov))
        .filter(|l| {
            let camera = l.visibility > MIN_VISIBILITY;
            let radar = l.n_radar_points >= 1;
            match mode {
                FilterMode::Camera2d => camera,
                FilterMode::Radar3d => radar,
                FilterMode::Fusion3d => camera || radar,
            }
        })
        .copied()
        .collect()
}
