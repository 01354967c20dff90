//! Anchors, box coding, target assignment, losses, heads, decoding and
//! non-maximum suppression.

pub mod anchors;
pub mod assign;
pub mod coding;
pub mod heads;
pub mod losses;
pub mod nms;

use serde::{Deserialize, Serialize};

pub use anchors::{generate_anchors_2d, generate_anchors_3d, Anchor2D, Anchor3D, AnchorConfig, ANCHORS_PER_CELL};
pub use assign::{assign_2d, assign_3d, AssignConfig, Assignment};
pub use coding::{decode_2d, decode_3d, encode_2d, encode_3d, DELTAS_2D, DELTAS_3D};
pub use heads::{Head, HeadOutput, PRIOR_PROBABILITY};
pub use losses::{focal_loss, focal_loss_logits, sigmoid, weighted_mse, AnchorTarget, FocalParams};
pub use nms::{nms_2d, nms_bev, nms_indices};

use crate::{Box2D, Box3D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub score_threshold: f64,
    /// Highest-scoring candidates kept, pooled over levels, before NMS.
    pub pre_nms_top_k: usize,
    pub nms_iou_2d: f64,
    pub nms_iou_bev: f64,
    pub max_detections: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            score_threshold: 0.05,
            pre_nms_top_k: 1000,
            nms_iou_2d: 0.5,
            nms_iou_bev: 0.3,
            max_detections: 100,
        }
    }
}

/// Raw outputs of one level with its anchors.
#[derive(Clone, Copy, Debug)]
pub struct LevelOutput<'a, A> {
    pub logits: &'a [f64],
    pub deltas: &'a [f64],
    pub anchors: &'a [A],
}

fn candidates<A>(levels: &[LevelOutput<'_, A>], cfg: &PostprocessConfig) -> Vec<(f64, usize, usize)> {
    let mut c: Vec<(f64, usize, usize)> = Vec::new();
    for (l, lv) in levels.iter().enumerate() {
        for (i, &z) in lv.logits.iter().enumerate() {
            let s = sigmoid(z);
            if s >= cfg.score_threshold {
                c.push((s, l, i));
            }
        }
    }
    c.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    c.truncate(cfg.pre_nms_top_k);
    c
}

/// Thresholds, decodes and suppresses 3D detections pooled over all levels.
pub fn postprocess_3d(levels: &[LevelOutput<'_, Anchor3D>], class_id: u32, cfg: &PostprocessConfig) -> Vec<Box3D> {
    let boxes: Vec<Box3D> = candidates(levels, cfg)
        .into_iter()
        .map(|(s, l, i)| {
            let d = &levels[l].deltas[i * DELTAS_3D..(i + 1) * DELTAS_3D];
            decode_3d(d, &levels[l].anchors[i], class_id, s)
        })
        .collect();
    let mut kept = nms_bev(&boxes, cfg.nms_iou_bev);
    kept.truncate(cfg.max_detections);
    kept
}

/// Thresholds, decodes and suppresses 2D detections pooled over all levels.
pub fn postprocess_2d(levels: &[LevelOutput<'_, Anchor2D>], class_id: u32, cfg: &PostprocessConfig) -> Vec<Box2D> {
    let boxes: Vec<Box2D> = candidates(levels, cfg)
        .into_iter()
        .map(|(s, l, i)| {
            let d = &levels[l].deltas[i * DELTAS_2D..(i + 1) * DELTAS_2D];
            decode_2d(d, &levels[l].anchors[i], class_id, s)
        })
        .collect();
    let mut kept = nms_2d(&boxes, cfg.nms_iou_2d);
    kept.truncate(cfg.max_detections);
    kept
}
