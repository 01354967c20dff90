use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cdsm_core::dataio::{load_scene, scene_paths};
use cdsm_core::train::Regime;
use cdsm_core::{Error, Scene};
use serde::{Deserialize, Serialize};

use crate::config::{LoadedConfig, Split};

pub const MANIFEST: &str = "manifest.json";

/// Version string recorded in manifests.
pub fn version_string() -> String {
    format!("cdsm {}", env!("CARGO_PKG_VERSION"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Commands run against this directory, in order.
    pub commands: Vec<String>,
}

/// Layout of one experiment's output directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.into(),
        source: e,
    }
}

impl RunDir {
    /// Opens (creating if needed) the run directory of `cfg` and records
    /// `command` in its manifest. A directory created from a different
    /// config is refused.
    pub fn open(cfg: &LoadedConfig, command: &str) -> anyhow::Result<Self> {
        let root = cfg.experiment.run_dir();
        fs::create_dir_all(&root).map_err(|e| io(&root, e))?;
        let dir = RunDir { root };
        let path = dir.root.join(MANIFEST);
        let mut manifest = if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
            let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: path.clone(),
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
            if m.config_sha256 != cfg.sha256 {
                return Err(Error::Config(format!(
                    "{} was created from a different config (sha256 {}); use a new experiment name",
                    dir.root.display(),
                    m.config_sha256
                ))
                .into());
            }
            m
        } else {
            let copy = dir.root.join("config.toml");
            fs::write(&copy, &cfg.text).map_err(|e| io(&copy, e))?;
            Manifest {
                name: cfg.experiment.name.clone(),
                version: version_string(),
                config_sha256: cfg.sha256.clone(),
                seed: cfg.experiment.seed,
                commands: Vec::new(),
            }
        };
        manifest.commands.push(command.to_string());
        dir.write_json(&path, &manifest)?;
        Ok(dir)
    }

    pub fn data_dir(&self, split: Split, preprocessed: bool) -> PathBuf {
        let base = if preprocessed { "preprocessed" } else { "data" };
        self.root.join(base).join(split.name())
    }

    pub fn checkpoint(&self, regime: Regime) -> PathBuf {
        self.root.join("checkpoints").join(format!("{regime}.ckpt"))
    }

    pub fn train_log(&self, regime: Regime) -> PathBuf {
        self.root.join("logs").join(format!("{regime}.json"))
    }

    pub fn detections_dir(&self, regime: Regime, split: Split) -> PathBuf {
        self.root.join("detections").join(regime.name()).join(split.name())
    }

    pub fn eval_report(&self, regime: Regime, split: Split) -> PathBuf {
        self.root.join("eval").join(format!("{regime}_{}.json", split.name()))
    }

    pub fn pr_plot(&self, regime: Regime, split: Split) -> PathBuf {
        self.root.join("eval").join(format!("{regime}_{}_pr.svg", split.name()))
    }

    pub fn render_dir(&self, regime: Regime, split: Split) -> PathBuf {
        self.root.join("render").join(regime.name()).join(split.name())
    }

    pub fn stats(&self, split: Split) -> PathBuf {
        self.root.join(format!("stats_{}.json", split.name()))
    }

    pub fn load_split(&self, split: Split, preprocessed: bool) -> anyhow::Result<Vec<Scene>> {
        let dir = self.data_dir(split, preprocessed);
        if !dir.is_dir() {
            bail!(Error::Io {
                path: dir,
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "split not generated; run `cdsm synth` first"
                ),
            });
        }
        let paths = scene_paths(&dir)?;
        paths
            .iter()
            .map(|p| load_scene(p).with_context(|| format!("loading {}", p.display())))
            .collect()
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        self.write_text(path, &text)
    }

    pub fn write_text(&self, path: &Path, text: &str) -> anyhow::Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::write(path, text).map_err(|e| io(path, e))?;
        Ok(())
    }
}
