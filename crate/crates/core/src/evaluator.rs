//! Greedy association, 101-point interpolated average precision and the
//! NuScenes-style distance-averaged mAP.

use serde::{Deserialize, Serialize};

use crate::{Box2D, Box3D, Error, Result};

/// Distance thresholds averaged by [`nuscenes_map`], in meters.
pub const NUSCENES_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Recall samples of the interpolated AP.
pub const RECALL_POINTS: usize = 101;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationKind {
    Iou2d,
    /// Center distance; planar `(x, y)` unless `use_z` is set.
    Dist3d {
        use_z: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationSpec {
    pub kind: AssociationKind,
    pub threshold: f64,
}

impl AssociationSpec {
    pub fn iou(threshold: f64) -> Self {
        AssociationSpec {
            kind: AssociationKind::Iou2d,
            threshold,
        }
    }

    pub fn dist(threshold: f64) -> Self {
        AssociationSpec {
            kind: AssociationKind::Dist3d { use_z: false },
            threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            AssociationKind::Iou2d => self.threshold > 0.0 && self.threshold < 1.0,
            AssociationKind::Dist3d { .. } => self.threshold > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid association threshold {}",
                self.threshold
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub label: usize,
    /// IoU or distance of the pair.
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Association {
    pub matches: Vec<Match>,
    /// Per prediction, whether it was matched.
    pub pred_matched: Vec<bool>,
    pub unmatched_labels: Vec<usize>,
}

/// Visits predictions by descending score (ties by index); each takes the
/// best still-unmatched label that satisfies the threshold.
fn greedy(
    scores: &[f64],
    n_labels: usize,
    better: impl Fn(usize, usize) -> Option<f64>,
    higher_is_better: bool,
) -> Association {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut taken = vec![false; n_labels];
    let mut pred_matched = vec![false; scores.len()];
    let mut matches = Vec::new();
    for p in order {
        let mut best: Option<(f64, usize)> = None;
        for l in (0..n_labels).filter(|&l| !taken[l]) {
            if let Some(v) = better(p, l) {
                let wins = match best {
                    None => true,
                    Some((bv, _)) => {
                        if higher_is_better {
                            v > bv
                        } else {
                            v < bv
                        }
                    }
                };
                if wins {
                    best = Some((v, l));
                }
            }
        }
        if let Some((value, label)) = best {
            taken[label] = true;
            pred_matched[p] = true;
            matches.push(Match { pred: p, label, value });
        }
    }
    Association {
        matches,
        pred_matched,
        unmatched_labels: (0..n_labels).filter(|&l| !taken[l]).collect(),
    }
}

pub fn center_distance(a: &Box3D, b: &Box3D, use_z: bool) -> f64 {
    if use_z {
        a.center.distance(&b.center)
    } else {
        a.center.planar_distance(&b.center)
    }
}

pub fn associate_3d(preds: &[Box3D], labels: &[Box3D], spec: &AssociationSpec) -> Association {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    match spec.kind {
        AssociationKind::Dist3d { use_z } => greedy(
            &scores,
            labels.len(),
            |p, l| {
                let d = center_distance(&preds[p], &labels[l], use_z);
                (d <= spec.threshold).then_some(d)
            },
            false,
        ),
        AssociationKind::Iou2d => greedy(
            &scores,
            labels.len(),
            |p, l| {
                let iou = preds[p].bev_iou(&labels[l]);
                (iou >= spec.threshold).then_some(iou)
            },
            true,
        ),
    }
}

pub fn associate_2d(preds: &[Box2D], labels: &[Box2D], spec: &AssociationSpec) -> Association {
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    greedy(
        &scores,
        labels.len(),
        |p, l| {
            let iou = preds[p].iou(&labels[l]);
            (iou >= spec.threshold).then_some(iou)
        },
        true,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApResult {
    /// NaN when there are no labels.
    pub ap: f64,
    pub undefined: bool,
    pub curve: PrCurve,
}

/// 101-point interpolated AP of `(score, is_true_positive)` pairs pooled
/// over scenes.
pub fn average_precision(scored: &[(f64, bool)], num_labels: usize) -> ApResult {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(scored.len());
    let mut recall = Vec::with_capacity(scored.len());
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        recall.push(if num_labels == 0 {
            0.0
        } else {
            tp as f64 / num_labels as f64
        });
    }
    let curve = PrCurve { precision, recall };
    if num_labels == 0 {
        return ApResult {
            ap: f64::NAN,
            undefined: true,
            curve,
        };
    }
    // envelope: best precision at recall ≥ r
    let mut envelope = curve.precision.clone();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut sum = 0.0;
    let mut j = 0;
    for k in 0..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        while j < curve.recall.len() && curve.recall[j] < r - 1e-12 {
            j += 1;
        }
        if j < curve.recall.len() {
            sum += envelope[j];
        }
    }
    ApResult {
        ap: sum / RECALL_POINTS as f64,
        undefined: false,
        curve,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenePair {
    pub scene: usize,
    pub pred: usize,
    pub label: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub spec: AssociationSpec,
    pub ap: f64,
    pub undefined: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub curve: PrCurve,
    pub matches: Vec<ScenePair>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_labels: usize,
    pub num_predictions: usize,
    pub results: Vec<ThresholdResult>,
    /// Mean AP over `results`; NaN if any is undefined.
    pub map: f64,
    pub undefined: bool,
}

impl EvalReport {
    pub fn ap_at(&self, threshold: f64) -> Option<f64> {
        self.results
            .iter()
            .find(|r| (r.spec.threshold - threshold).abs() < 1e-12)
            .map(|r| r.ap)
    }
}

fn threshold_result(
    spec: &AssociationSpec,
    per_scene: &[(Vec<f64>, Association)],
    num_labels: usize,
) -> ThresholdResult {
    let mut scored = Vec::new();
    let mut matches = Vec::new();
    for (s, (scores, a)) in per_scene.iter().enumerate() {
        scored.extend(scores.iter().zip(&a.pred_matched).map(|(&sc, &m)| (sc, m)));
        matches.extend(a.matches.iter().map(|m| ScenePair {
            scene: s,
            pred: m.pred,
            label: m.label,
            value: m.value,
        }));
    }
    let tp = matches.len();
    let r = average_precision(&scored, num_labels);
    ThresholdResult {
        spec: *spec,
        ap: r.ap,
        undefined: r.undefined,
        tp,
        fp: scored.len() - tp,
        fn_: num_labels - tp,
        curve: r.curve,
        matches,
    }
}

fn report(results: Vec<ThresholdResult>, num_labels: usize, num_predictions: usize) -> EvalReport {
    let undefined = results.iter().any(|r| r.undefined);
    let map = if undefined || results.is_empty() {
        f64::NAN
    } else {
        results.iter().map(|r| r.ap).sum::<f64>() / results.len() as f64
    };
    EvalReport {
        num_labels,
        num_predictions,
        results,
        map,
        undefined,
    }
}

/// Evaluates per-scene `(predictions, labels)` at each spec.
pub fn evaluate_3d(scenes: &[(Vec<Box3D>, Vec<Box3D>)], specs: &[AssociationSpec]) -> Result<EvalReport> {
    let num_labels = scenes.iter().map(|s| s.1.len()).sum();
    let num_predictions = scenes.iter().map(|s| s.0.len()).sum();
    let mut results = Vec::new();
    for spec in specs {
        spec.validate()?;
        let per_scene: Vec<(Vec<f64>, Association)> = scenes
            .iter()
            .map(|(p, l)| (p.iter().map(|b| b.score).collect(), associate_3d(p, l, spec)))
            .collect();
        results.push(threshold_result(spec, &per_scene, num_labels));
    }
    Ok(report(results, num_labels, num_predictions))
}

pub fn evaluate_2d(scenes: &[(Vec<Box2D>, Vec<Box2D>)], specs: &[AssociationSpec]) -> Result<EvalReport> {
    let num_labels = scenes.iter().map(|s| s.1.len()).sum();
    let num_predictions = scenes.iter().map(|s| s.0.len()).sum();
    let mut results = Vec::new();
    for spec in specs {
        spec.validate()?;
        let per_scene: Vec<(Vec<f64>, Association)> = scenes
            .iter()
            .map(|(p, l)| (p.iter().map(|b| b.score).collect(), associate_2d(p, l, spec)))
            .collect();
        results.push(threshold_result(spec, &per_scene, num_labels));
    }
    Ok(report(results, num_labels, num_predictions))
}

pub fn nuscenes_specs(use_z: bool) -> Vec<AssociationSpec> {
    NUSCENES_THRESHOLDS
        .iter()
        .map(|&t| AssociationSpec {
            kind: AssociationKind::Dist3d { use_z },
            threshold: t,
        })
        .collect()
}

/// Mean AP over center-distance thresholds 0.5, 1, 2 and 4 m.
pub fn nuscenes_map(scenes: &[(Vec<Box3D>, Vec<Box3D>)]) -> EvalReport {
    evaluate_3d(scenes, &nuscenes_specs(false)).expect("fixed thresholds are valid")
}
