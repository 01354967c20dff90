//! Central finite-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::{Result, Tensor};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Outcome of a gradient check: the worst per-tensor relative error.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub worst_rel_err: f64,
    pub worst_param: String,
    pub checked_values: usize,
}

/// `max|a - n| / max(max|a|, max|n|)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic.iter().chain(numeric).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn projection(tape: &Tape, outputs: &[Var], seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    outputs
        .iter()
        .map(|&o| Tensor::from_fn(tape.shape(o), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn projected_loss(
    store: &ParamStore,
    forward: &impl Fn(&mut Tape) -> Result<Vec<Var>>,
    weights: &[Tensor],
) -> Result<f64> {
    let mut tape = Tape::new(store);
    let outs = forward(&mut tape)?;
    Ok(outs
        .iter()
        .zip(weights)
        .map(|(&o, r)| {
            tape.value(o)
                .data()
                .iter()
                .zip(r.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum())
}

/// Checks the tape gradients of every trainable parameter against central
/// differences of the scalar `Σ r ⊙ outputs`, with fixed random `r`.
pub fn check_param_gradients(
    store: &ParamStore,
    seed: u64,
    forward: impl Fn(&mut Tape) -> Result<Vec<Var>>,
) -> Result<GradCheck> {
    let mut tape = Tape::new(store);
    let outs = forward(&mut tape)?;
    let weights = projection(&tape, &outs, seed);
    let seeds: Vec<(Var, &Tensor)> = outs.iter().copied().zip(weights.iter()).collect();
    let grads = tape.backward(&seeds)?;
    drop(tape);

    let mut work = store.clone();
    let mut report = GradCheck {
        worst_rel_err: 0.0,
        worst_param: String::new(),
        checked_values: 0,
    };
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        let mut numeric = vec![0.0; p.value.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let x0 = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = x0 + FD_STEP;
            let lp = projected_loss(&work, &forward, &weights)?;
            work.get_mut(id).value.data_mut()[i] = x0 - FD_STEP;
            let lm = projected_loss(&work, &forward, &weights)?;
            work.get_mut(id).value.data_mut()[i] = x0;
            *slot = (lp - lm) / (2.0 * FD_STEP);
        }
        report.checked_values += numeric.len();
        let err = relative_error(analytic.data(), &numeric);
        if err >= report.worst_rel_err {
            report.worst_rel_err = err;
            report.worst_param = p.name.clone();
        }
    }
    Ok(report)
}

/// Relative error between `analytic` and central differences of `f` at `x`.
pub fn check_function_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) -> f64 {
    let mut work = x.to_vec();
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            work[i] = x[i] + FD_STEP;
            let lp = f(&work);
            work[i] = x[i] - FD_STEP;
            let lm = f(&work);
            work[i] = x[i];
            (lp - lm) / (2.0 * FD_STEP)
        })
        .collect();
    relative_error(analytic, &numeric)
}
