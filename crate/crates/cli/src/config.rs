use std::path::{Path, PathBuf};

use anyhow::Context;
use cdsm_core::dataio::{FilterMode, SynthConfig};
use cdsm_core::detector::FocalParams;
use cdsm_core::train::{ModelConfig, Regime, TrainConfig};
use cdsm_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides the run root of every config.
pub const RUN_ROOT_ENV: &str = "CDSM_RUN_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Added to the experiment seed to derive scene seeds of this split.
    fn seed_offset(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1 << 20,
            Split::Test => 2 << 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train: 8,
            val: 2,
            test: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regime: Regime,
    pub lr: f64,
    pub lr_floor: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub focal: FocalParams,
    pub reg_weights: Option<Vec<f64>>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            regime: t.regime,
            lr: t.lr,
            lr_floor: t.lr_floor,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            focal: t.focal,
            reg_weights: t.reg_weights,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: Split,
    /// Ground truth to score against; the regime's own filter when absent.
    pub label_filter: Option<FilterMode>,
    pub use_z: bool,
    pub iou_thresholds: Vec<f64>,
    /// Association used to color renders: IoU for 2D, meters for 3D.
    pub render_iou: f64,
    pub render_distance: f64,
    /// Scenes rendered per call; all when absent.
    pub render_limit: Option<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: Split::Test,
            label_filter: None,
            use_z: false,
            iou_thresholds: vec![0.2, 0.5],
            render_iou: 0.2,
            render_distance: 2.0,
            render_limit: None,
        }
    }
}

/// One experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub run_root: Option<PathBuf>,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            name: "experiment".into(),
            seed: 0,
            run_root: None,
            data: DataConfig::default(),
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// An experiment together with the exact text it was parsed from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub experiment: Experiment,
    pub text: String,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io {
                path: path.into(),
                source: e,
            })
            .context("reading experiment config")?;
        let experiment: Experiment = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            location: e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "unknown".into()),
            message: e.message().to_string(),
        })?;
        experiment.validate()?;
        let sha256 = Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        Ok(LoadedConfig {
            experiment,
            text,
            sha256,
        })
    }
}

impl Experiment {
    pub fn validate(&self) -> Result<(), Error> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(Error::Config(format!(
                "experiment name {:?} is not a plain directory name",
                self.name
            )));
        }
        self.train_config(self.train.regime).validate()
    }

    pub fn split_len(&self, split: Split) -> usize {
        match split {
            Split::Train => self.data.train,
            Split::Val => self.data.val,
            Split::Test => self.data.test,
        }
    }

    pub fn scene_seed(&self, split: Split, index: usize) -> u64 {
        self.seed
            .wrapping_mul(1 << 24)
            .wrapping_add(split.seed_offset())
            .wrapping_add(index as u64)
    }

    pub fn train_config(&self, regime: Regime) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            regime,
            seed: self.seed,
            lr: t.lr,
            lr_floor: t.lr_floor,
            max_epochs: t.max_epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            focal: t.focal,
            reg_weights: t.reg_weights.clone(),
            model: self.model.clone(),
        }
    }

    /// Run root: the environment override, then the config, then `runs`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .or_else(|| self.run_root.clone())
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(&self.name)
    }
}
