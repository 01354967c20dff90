use crate::{Box2D, Box3D};

/// Greedy suppression: visit in descending score (ties by index) and keep a
/// box unless it overlaps an already kept box by more than `threshold`.
/// Returns kept indices in visiting order.
pub fn nms_indices(scores: &[f64], threshold: f64, iou: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(k, i) <= threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms_2d(boxes: &[Box2D], threshold: f64) -> Vec<Box2D> {
    let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    nms_indices(&scores, threshold, |a, b| boxes[a].iou(&boxes[b]))
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

/// Suppression by rotated bird's-eye-view footprint overlap.
pub fn nms_bev(boxes: &[Box3D], threshold: f64) -> Vec<Box3D> {
    let scores: Vec<f64> = boxes.iter().map(|b| b.score).collect();
    nms_indices(&scores, threshold, |a, b| boxes[a].bev_iou(&boxes[b]))
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}
