//! Experiment configuration: one JSON document with a versioned schema.

use std::path::{Path, PathBuf};

use rdp_core::codec::ArchConfig;
use rdp_core::training::{SweepConfig, TrainConfig};
use rdp_core::CoreError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub train_dir: PathBuf,
    pub eval_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub arch: ArchConfig,
    /// One entry per rate point, trained in this order.
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    pub dataset: DatasetPaths,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("rdp-output")
}

fn config_err(path: &str, e: CoreError) -> HarnessError {
    // core messages already carry the field path
    match e {
        CoreError::InvalidArgument(m) => match m.split_once(": ") {
            Some((p, rest)) => HarnessError::Config {
                path: p.to_string(),
                message: rest.to_string(),
            },
            None => HarnessError::Config {
                path: path.to_string(),
                message: m,
            },
        },
        other => HarnessError::Config {
            path: path.to_string(),
            message: other.to_string(),
        },
    }
}

fn check_dir(field: &str, dir: &Path) -> Result<()> {
    std::fs::read_dir(dir).map(|_| ()).map_err(|e| HarnessError::Config {
        path: field.to_string(),
        message: format!("cannot read directory {}: {e}", dir.display()),
    })
}

impl ExperimentConfig {
    /// A config with every default filled in, for the given dataset.
    pub fn new(train_dir: impl Into<PathBuf>, eval_dir: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            arch: ArchConfig::default(),
            lambdas: vec![TrainConfig::default().lambda],
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            dataset: DatasetPaths {
                train_dir: train_dir.into(),
                eval_dir: eval_dir.into(),
            },
            output_dir: default_output_dir(),
            seed: 0,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            HarnessError::Config {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })
    }

    /// Checks every invariant, including that dataset directories are readable.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config {
                path: "schema_version".into(),
                message: format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            });
        }
        self.arch.validate().map_err(|e| config_err("arch", e))?;
        if self.lambdas.is_empty() {
            return Err(HarnessError::Config {
                path: "lambdas".into(),
                message: "must contain at least one value".into(),
            });
        }
        for (i, l) in self.lambdas.iter().enumerate() {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(HarnessError::Config {
                    path: format!("lambdas[{i}]"),
                    message: format!("must be finite and > 0, got {l}"),
                });
            }
        }
        let up = self.lambdas.windows(2).all(|w| w[0] < w[1]);
        let down = self.lambdas.windows(2).all(|w| w[0] > w[1]);
        if !(up || down) {
            return Err(HarnessError::Config {
                path: "lambdas".into(),
                message: "must be strictly increasing or strictly decreasing".into(),
            });
        }
        self.train.validate(&self.arch, "train").map_err(|e| config_err("train", e))?;
        self.sweep.validate(&self.arch, "sweep").map_err(|e| config_err("sweep", e))?;
        check_dir("dataset.train_dir", &self.dataset.train_dir)?;
        check_dir("dataset.eval_dir", &self.dataset.eval_dir)?;
        Ok(())
    }

    /// Identity of the experiment: everything except where outputs go.
    pub fn experiment_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    /// The `train` template with a rate point's lambda and seed filled in.
    pub fn rd_config(&self, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda,
            seed,
            ..self.train.clone()
        }
    }
}

/// Reads and fully validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let cfg = ExperimentConfig::parse(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(path: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg)?;
    std::fs::write(path, text).map_err(io_err(path))
}
