use std::sync::mpsc::sync_channel;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Model, Prepared};
use super::optim::{adam_step, cosine_lr, AdamState, EarlyStopping};
use super::{Regime, TrainConfig};
use crate::detector::FocalParams;
use crate::tensornet::{Gradients, ParamStore};
use crate::{Error, Result, Scene};

/// Checkpoints a regime starts from.
#[derive(Clone, Debug, Default)]
pub struct Pretrained {
    /// Camera model (`cam3d` or `cam2d`) for `fusion_frozen`.
    pub camera: Option<ParamStore>,
    /// `radar3d` model for `fusion_frozen`.
    pub radar: Option<ParamStore>,
    /// `fusion_frozen` model for `fusion_finetune`.
    pub fusion: Option<ParamStore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    /// Absent for the epoch-0 evaluation of the initial parameters.
    pub train_loss: Option<f64>,
    pub train_cls: Option<f64>,
    pub train_reg: Option<f64>,
    pub val_loss: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model with the parameters of the best validation epoch.
    pub model: Model,
    /// Parameters after the last epoch run.
    pub last_params: ParamStore,
    pub log: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Prepares scenes in parallel, preserving order.
pub fn prepare_all(model: &Model, scenes: &[Scene], with_targets: bool) -> Result<Vec<Prepared>> {
    scenes.par_iter().map(|s| model.prepare(s, with_targets)).collect()
}

/// Mean loss over prepared samples, without gradients.
pub fn evaluate_loss(model: &Model, samples: &[Prepared], focal: FocalParams, weights: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate the loss of an empty set".into()));
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|p| model.sample_loss(p, focal, weights, false).map(|l| l.total()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn initialize(model: &mut Model, pretrained: &Pretrained) -> Result<()> {
    match model.regime {
        Regime::FusionFrozen => {
            let cam = pretrained
                .camera
                .as_ref()
                .ok_or_else(|| Error::MissingCheckpoint("camera model for fusion_frozen".into()))?;
            let radar = pretrained
                .radar
                .as_ref()
                .ok_or_else(|| Error::MissingCheckpoint("radar model for fusion_frozen".into()))?;
            if model.load_params(cam, &["cam."])? == 0 {
                return Err(Error::Checkpoint("camera checkpoint has no camera branch".into()));
            }
            model.load_params(cam, &["cdsm.proj", "cdsm.refine"])?;
            if model.load_params(radar, &["radar."])? == 0 {
                return Err(Error::Checkpoint("radar checkpoint has no radar branch".into()));
            }
        }
        Regime::FusionFinetune => {
            let f = pretrained
                .fusion
                .as_ref()
                .ok_or_else(|| Error::MissingCheckpoint("fusion_frozen model for fusion_finetune".into()))?;
            let n = model.load_params(f, &[""])?;
            if n != model.store.len() {
                return Err(Error::Checkpoint(format!(
                    "fusion checkpoint covers {n} of {} parameters",
                    model.store.len()
                )));
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &[Scene],
    val_set: &[Scene],
    pretrained: &Pretrained,
) -> Result<TrainOutcome> {
    train_with(cfg, train_set, val_set, pretrained, |_, _| Ok(false))
}

/// Trains `cfg.regime`; `hook` sees the model after every epoch and stops
/// training by returning `true`.
pub fn train_with(
    cfg: &TrainConfig,
    train_set: &[Scene],
    val_set: &[Scene],
    pretrained: &Pretrained,
    mut hook: impl FnMut(&Model, &EpochMetrics) -> Result<bool>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let mut model = Model::new(&cfg.model, cfg.regime, cfg.seed)?;
    initialize(&mut model, pretrained)?;
    let weights = cfg.weights();
    let preparer = model.clone();
    let val = prepare_all(&model, val_set, true)?;

    let mut es = EarlyStopping::new(cfg.patience)?;
    let baseline = evaluate_loss(&model, &val, cfg.focal, &weights)?;
    es.observe(0, baseline);
    let mut log = vec![EpochMetrics {
        epoch: 0,
        lr: cfg.lr,
        train_loss: None,
        train_cls: None,
        train_reg: None,
        val_loss: baseline,
        improved: true,
    }];
    let mut best = model.store.clone();
    let mut adam = AdamState::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        let lr = cosine_lr(epoch - 1, cfg.max_epochs, cfg.lr, cfg.floor())?;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9),
        ));
        let (mut cls_sum, mut reg_sum) = (0.0, 0.0);

        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = sync_channel::<Result<Vec<Prepared>>>(2);
            let preparer = &preparer;
            let order = &order;
            scope.spawn(move || {
                for chunk in order.chunks(cfg.batch_size) {
                    let batch = chunk
                        .iter()
                        .map(|&i| preparer.prepare(&train_set[i], true))
                        .collect::<Result<Vec<_>>>();
                    let failed = batch.is_err();
                    if tx.send(batch).is_err() || failed {
                        break;
                    }
                }
            });
            for batch in rx {
                let batch = batch?;
                let losses = batch
                    .par_iter()
                    .map(|p| model.sample_loss(p, cfg.focal, &weights, true))
                    .collect::<Result<Vec<_>>>()?;
                let mut grads = Gradients::default();
                for l in &losses {
                    cls_sum += l.cls;
                    reg_sum += l.reg;
                    grads.add(l.grads.as_ref().expect("requested gradients"));
                }
                grads.scale(1.0 / losses.len() as f64);
                adam_step(&mut model.store, &grads, &mut adam, lr)?;
            }
            Ok(())
        })?;

        let n = train_set.len() as f64;
        let val_loss = evaluate_loss(&model, &val, cfg.focal, &weights)?;
        let (improved, stop) = es.observe(epoch, val_loss);
        if improved {
            best = model.store.clone();
        }
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: Some((cls_sum + reg_sum) / n),
            train_cls: Some(cls_sum / n),
            train_reg: Some(reg_sum / n),
            val_loss,
            improved,
        };
        log.push(m.clone());
        if hook(&model, &m)? {
            break;
        }
        if stop {
            stopped_early = true;
            break;
        }
    }
    let last_params = std::mem::replace(&mut model.store, best);
    Ok(TrainOutcome {
        model,
        last_params,
        log,
        best_epoch: es.best_epoch,
        stopped_early,
    })
}
