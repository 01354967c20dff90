//! Anchor-to-label assignment and regression targets.

use serde::{Deserialize, Serialize};

use super::anchors::{Anchor2D, Anchor3D};
use super::coding::{encode_2d, encode_3d, DELTAS_2D, DELTAS_3D};
use super::losses::AnchorTarget;
use crate::{Box2D, Box3D, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssignConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    /// 3D positives lie within this many cell sizes of a label center.
    pub pos_cells: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            pos_iou: 0.5,
            neg_iou: 0.4,
            pos_cells: 1.0,
        }
    }
}

/// Classification targets, regression targets (zero for non-positives) and
/// the label each positive anchor regresses to.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub targets: Vec<AnchorTarget>,
    pub deltas: Vec<f64>,
    pub matched: Vec<Option<usize>>,
}

impl Assignment {
    pub fn num_positive(&self) -> usize {
        self.targets.iter().filter(|&&t| t == AnchorTarget::Positive).count()
    }
}

/// IoU assignment: `≥ pos_iou` positive, `< neg_iou` negative, otherwise
/// ignored; each label's best-overlapping anchor is forced positive.
pub fn assign_2d(labels: &[Box2D], anchors: &[Anchor2D], cfg: &AssignConfig) -> Result<Assignment> {
    let n = anchors.len();
    let mut best_iou = vec![0.0f64; n];
    let mut matched = vec![None; n];
    let mut label_best = vec![(0.0f64, None::<usize>); labels.len()];
    for (i, a) in anchors.iter().enumerate() {
        let ab = Box2D {
            u_min: a.cx - a.w / 2.0,
            v_min: a.cy - a.h / 2.0,
            u_max: a.cx + a.w / 2.0,
            v_max: a.cy + a.h / 2.0,
            class_id: 0,
            score: 1.0,
        };
        for (j, l) in labels.iter().enumerate() {
            let iou = ab.iou(l);
            if iou > best_iou[i] {
                best_iou[i] = iou;
                matched[i] = Some(j);
            }
            if iou > label_best[j].0 {
                label_best[j] = (iou, Some(i));
            }
        }
    }
    let mut targets: Vec<AnchorTarget> = best_iou
        .iter()
        .map(|&iou| {
            if iou >= cfg.pos_iou {
                AnchorTarget::Positive
            } else if iou < cfg.neg_iou {
                AnchorTarget::Negative
            } else {
                AnchorTarget::Ignore
            }
        })
        .collect();
    for (j, &(_, best)) in label_best.iter().enumerate() {
        if let Some(i) = best {
            targets[i] = AnchorTarget::Positive;
            matched[i] = Some(j);
        }
    }
    let mut deltas = vec![0.0; n * DELTAS_2D];
    for i in 0..n {
        if targets[i] == AnchorTarget::Positive {
            let d = encode_2d(&labels[matched[i].unwrap()], &anchors[i])?;
            deltas[i * DELTAS_2D..(i + 1) * DELTAS_2D].copy_from_slice(&d);
        } else {
            matched[i] = None;
        }
    }
    Ok(Assignment {
        targets,
        deltas,
        matched,
    })
}

/// Center-distance assignment: an anchor is positive when its center lies
/// closer than `pos_cells × cell_size` to a label center (nearest label
/// wins), negative otherwise.
pub fn assign_3d(labels: &[Box3D], anchors: &[Anchor3D], cell_size: f64, cfg: &AssignConfig) -> Result<Assignment> {
    let n = anchors.len();
    let radius = cfg.pos_cells * cell_size;
    let mut targets = vec![AnchorTarget::Negative; n];
    let mut matched = vec![None; n];
    let mut deltas = vec![0.0; n * DELTAS_3D];
    for (i, a) in anchors.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (j, l) in labels.iter().enumerate() {
            let d = (l.center.x - a.x).hypot(l.center.y - a.y);
            if d < radius && best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((_, j)) = best {
            targets[i] = AnchorTarget::Positive;
            matched[i] = Some(j);
            let d = encode_3d(&labels[j], a)?;
            deltas[i * DELTAS_3D..(i + 1) * DELTAS_3D].copy_from_slice(&d);
        }
    }
    Ok(Assignment {
        targets,
        deltas,
        matched,
    })
}
