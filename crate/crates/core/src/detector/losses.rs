//! Focal classification loss and weighted squared-error regression loss,
//! each returning the loss and its gradient.

use serde::{Deserialize, Serialize};

/// Per-anchor classification target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorTarget {
    Positive,
    Negative,
    Ignore,
}

/// Probability clamp of [`focal_loss`].
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 1.5,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn num_positive(targets: &[AnchorTarget]) -> usize {
    targets.iter().filter(|&&t| t == AnchorTarget::Positive).count()
}

/// Focal loss on probabilities, summed and divided by `max(1, positives)`.
/// Logarithm arguments are clamped below at `PROB_EPS`.
pub fn focal_loss(probs: &[f64], targets: &[AnchorTarget], fp: FocalParams) -> f64 {
    let norm = num_positive(targets).max(1) as f64;
    probs
        .iter()
        .zip(targets)
        .map(|(&p, t)| {
            let p = p.clamp(0.0, 1.0);
            match t {
                AnchorTarget::Positive => -fp.alpha * (1.0 - p).powf(fp.gamma) * p.max(PROB_EPS).ln(),
                AnchorTarget::Negative => -(1.0 - fp.alpha) * p.powf(fp.gamma) * (1.0 - p).max(PROB_EPS).ln(),
                AnchorTarget::Ignore => 0.0,
            }
        })
        .sum::<f64>()
        / norm
}

/// Focal loss on logits and its gradient with respect to the logits.
pub fn focal_loss_logits(logits: &[f64], targets: &[AnchorTarget], fp: FocalParams) -> (f64, Vec<f64>) {
    let norm = num_positive(targets).max(1) as f64;
    let (a, g) = (fp.alpha, fp.gamma);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, t)| {
            let p = sigmoid(z);
            let q = sigmoid(-z);
            let (value, d) = match t {
                AnchorTarget::Positive => {
                    let ln_p = -softplus(-z);
                    let w = q.powf(g);
                    (-a * w * ln_p, a * (g * p * w * ln_p - w * q))
                }
                AnchorTarget::Negative => {
                    let ln_q = -softplus(z);
                    let w = p.powf(g);
                    (-(1.0 - a) * w * ln_q, -(1.0 - a) * (g * q * w * ln_q - w * p))
                }
                AnchorTarget::Ignore => (0.0, 0.0),
            };
            loss += value;
            d / norm
        })
        .collect();
    (loss / norm, grad)
}

/// `Σ w_c (pred - target)^2` over positive anchors, divided by the positive
/// count; zero without positives. `pred` and `target` hold
/// `weights.len()` values per anchor.
pub fn weighted_mse(pred: &[f64], target: &[f64], targets: &[AnchorTarget], weights: &[f64]) -> (f64, Vec<f64>) {
    let d = weights.len();
    let npos = num_positive(targets);
    let mut grad = vec![0.0; pred.len()];
    if npos == 0 {
        return (0.0, grad);
    }
    let norm = npos as f64;
    let mut loss = 0.0;
    for (i, t) in targets.iter().enumerate() {
        if *t != AnchorTarget::Positive {
            continue;
        }
        for c in 0..d {
            let e = pred[i * d + c] - target[i * d + c];
            loss += weights[c] * e * e;
            grad[i * d + c] = 2.0 * weights[c] * e / norm;
        }
    }
    (loss / norm, grad)
}
