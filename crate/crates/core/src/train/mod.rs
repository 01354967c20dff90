//! Model assembly, sample preparation, optimization and the training
//! regimes.

mod model;
mod optim;
mod run;

pub use model::{Model, ModelConfig, Prepared, SampleLoss, Targets, PIXEL_MEAN, PIXEL_STD};
pub use optim::{adam_step, cosine_lr, AdamState, EarlyStopping, MomentState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use run::{evaluate_loss, prepare_all, train, train_with, EpochMetrics, Pretrained, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::dataio::FilterMode;
use crate::detector::FocalParams;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Cam2d,
    Cam3d,
    Radar3d,
    FusionFrozen,
    FusionFinetune,
}

impl Regime {
    pub const ALL: [Regime; 5] = [
        Regime::Cam2d,
        Regime::Cam3d,
        Regime::Radar3d,
        Regime::FusionFrozen,
        Regime::FusionFinetune,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Cam2d => "cam2d",
            Regime::Cam3d => "cam3d",
            Regime::Radar3d => "radar3d",
            Regime::FusionFrozen => "fusion_frozen",
            Regime::FusionFinetune => "fusion_finetune",
        }
    }

    pub fn is_3d(self) -> bool {
        self != Regime::Cam2d
    }

    pub fn uses_camera(self) -> bool {
        self != Regime::Radar3d
    }

    pub fn uses_radar(self) -> bool {
        matches!(self, Regime::Radar3d | Regime::FusionFrozen | Regime::FusionFinetune)
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Regime::FusionFrozen | Regime::FusionFinetune)
    }

    /// Ground truth each regime trains on.
    pub fn filter(self) -> FilterMode {
        match self {
            Regime::Cam2d | Regime::Cam3d => FilterMode::Camera2d,
            Regime::Radar3d => FilterMode::Radar3d,
            Regime::FusionFrozen | Regime::FusionFinetune => FilterMode::Fusion3d,
        }
    }

    /// Parameter prefixes held fixed during training.
    pub fn frozen_prefixes(self) -> &'static [&'static str] {
        match self {
            Regime::FusionFrozen => &["cam.", "radar."],
            _ => &[],
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown regime {s:?}")))
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    pub seed: u64,
    pub lr: f64,
    /// Cosine floor; `lr / 100` when absent.
    pub lr_floor: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub focal: FocalParams,
    /// Per-coordinate regression weights; all ones when absent.
    pub reg_weights: Option<Vec<f64>>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            regime: Regime::FusionFrozen,
            seed: 0,
            lr: 3e-5,
            lr_floor: None,
            max_epochs: 100,
            patience: 5,
            batch_size: 4,
            focal: FocalParams::default(),
            reg_weights: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch size and epoch count must be positive".into()));
        }
        if let Some(w) = &self.reg_weights {
            let want = if self.regime.is_3d() {
                crate::detector::DELTAS_3D
            } else {
                crate::detector::DELTAS_2D
            };
            if w.len() != want {
                return Err(Error::Config(format!(
                    "{} regression weights given, {} expected",
                    w.len(),
                    want
                )));
            }
        }
        self.model.validate()
    }

    pub fn floor(&self) -> f64 {
        self.lr_floor.unwrap_or(self.lr / 100.0)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.reg_weights.clone().unwrap_or_else(|| {
            let n = if self.regime.is_3d() {
                crate::detector::DELTAS_3D
            } else {
                crate::detector::DELTAS_2D
            };
            vec![1.0; n]
        })
    }
}
