//! Adam, cosine annealing and early stopping.

use crate::tensornet::{Gradients, ParamStore};
use crate::{Error, Result, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct MomentState {
    pub m: Tensor,
    pub v: Tensor,
    pub steps: u64,
}

/// Per-parameter Adam moments, created on first use.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub moments: Vec<Option<MomentState>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of every trainable parameter. Parameters
/// whose gradient is absent or identically zero are skipped, moments
/// included.
pub fn adam_step(store: &mut ParamStore, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(store.get(id).name.clone()));
            }
        }
    }
    if state.moments.len() < store.len() {
        state.moments.resize(store.len(), None);
    }
    for id in store.ids() {
        let p = store.get_mut(id);
        if p.frozen {
            continue;
        }
        let Some(g) = grads.get(id) else { continue };
        if g.data().iter().all(|&x| x == 0.0) {
            continue;
        }
        let st = state.moments[id.index()].get_or_insert_with(|| MomentState {
            m: Tensor::zeros(g.shape()),
            v: Tensor::zeros(g.shape()),
            steps: 0,
        });
        st.steps += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(st.steps as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(st.steps as i32);
        let (m, v) = (st.m.data_mut(), st.v.data_mut());
        for (i, (w, &gi)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
        if !p.value.all_finite() {
            return Err(Error::NonFiniteGradient(format!("{} (after update)", p.name)));
        }
    }
    Ok(())
}

/// `floor + (lr0 - floor)(1 + cos(π step / total)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64, floor: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs a positive period".into()));
    }
    let t = step.min(total) as f64 / total as f64;
    Ok(floor + (lr0 - floor) * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}

/// Tracks the best validation loss; signals a stop once the best is at
/// least `patience` epochs old.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
        })
    }

    /// Records the loss of `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = epoch;
        }
        (improved, epoch - self.best_epoch >= self.patience)
    }
}
