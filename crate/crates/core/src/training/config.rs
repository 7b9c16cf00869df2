use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::codec::{ArchConfig, SubNetwork};
use crate::error::{CoreError, Result};
use crate::metrics::FeatureExtractorSpec;

/// The 0-255 scale sweep values `1e-2, 1e-3, 5e-4, 1e-4, 5e-5, 0` rescaled
/// by `255^2` because MSE here is measured on `[0, 1]` pixels.
pub const DEFAULT_GAMMAS: [f64; 6] = [650.25, 65.025, 32.5125, 6.5025, 3.25125, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the rate term in `mse + lambda * bpp`.
    pub lambda: f64,
    /// Weight of the distortion term in `gamma * mse + perceptual`.
    pub gamma: f64,
    pub learning_rate: f64,
    /// Fraction of the run after which the learning rate is multiplied by
    /// `lr_decay_factor` (1.0 disables the drop).
    pub lr_decay_at: f64,
    pub lr_decay_factor: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub patch_size: usize,
    pub seed: u64,
    pub train_metric_spec: FeatureExtractorSpec,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.01,
            gamma: 0.0,
            learning_rate: 1e-4,
            lr_decay_at: 0.8,
            lr_decay_factor: 0.1,
            iterations: 5000,
            batch_size: 8,
            patch_size: 64,
            seed: 0,
            train_metric_spec: FeatureExtractorSpec::default_train(),
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Learning rate in effect at a zero-based iteration.
    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        if (iteration as f64) >= self.lr_decay_at * self.iterations as f64 {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }

    /// Checks every field; `prefix` names the config path in messages.
    pub fn validate(&self, arch: &ArchConfig, prefix: &str) -> Result<()> {
        let err = |field: &str, msg: String| Err(CoreError::InvalidArgument(format!("{prefix}.{field}: {msg}")));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return err("lambda", format!("must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return err("gamma", format!("must be finite and >= 0, got {}", self.gamma));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return err("learning_rate", format!("must be finite and > 0, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.lr_decay_at) {
            return err("lr_decay_at", format!("must lie in [0, 1], got {}", self.lr_decay_at));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return err("lr_decay_factor", format!("must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.iterations == 0 {
            return err("iterations", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be at least 1".into());
        }
        let f = arch.total_factor();
        if self.patch_size == 0 || self.patch_size % f != 0 {
            return err("patch_size", format!("must be a positive multiple of {f}, got {}", self.patch_size));
        }
        if self.log_every == 0 {
            return err("log_every", "must be at least 1".into());
        }
        self.train_metric_spec
            .validate()
            .map_err(|e| CoreError::InvalidArgument(format!("{prefix}.train_metric_spec: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    /// Fine-tuning settings; its `gamma` is replaced by each swept value.
    pub finetune: TrainConfig,
    pub eval_metric_spec: FeatureExtractorSpec,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            gammas: DEFAULT_GAMMAS.to_vec(),
            finetune: TrainConfig {
                iterations: 1500,
                learning_rate: 1e-4,
                ..TrainConfig::default()
            },
            eval_metric_spec: FeatureExtractorSpec::default_eval(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, arch: &ArchConfig, prefix: &str) -> Result<()> {
        if self.gammas.is_empty() {
            return Err(CoreError::InvalidArgument(format!("{prefix}.gammas: must not be empty")));
        }
        for (i, g) in self.gammas.iter().enumerate() {
            if !(*g >= 0.0) || !g.is_finite() {
                return Err(CoreError::InvalidArgument(format!("{prefix}.gammas[{i}]: must be finite and >= 0")));
            }
            if self.gammas[..i].iter().any(|h| h.to_bits() == g.to_bits() || h == g) {
                return Err(CoreError::InvalidArgument(format!("{prefix}.gammas[{i}]: duplicate value {g}")));
            }
        }
        self.finetune.validate(arch, &format!("{prefix}.finetune"))?;
        self.eval_metric_spec
            .validate()
            .map_err(|e| CoreError::InvalidArgument(format!("{prefix}.eval_metric_spec: {e}")))
    }
}

/// Which sub-networks an optimiser may touch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub frozen: BTreeSet<SubNetwork>,
    pub trainable: BTreeSet<SubNetwork>,
}

impl FreezeMask {
    /// Everything that shapes the bitstream is frozen; only synthesis trains.
    pub fn rate_fixing() -> Self {
        FreezeMask {
            frozen: SubNetwork::RATE_DETERMINING.into_iter().collect(),
            trainable: [SubNetwork::Synthesis].into_iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all: BTreeSet<SubNetwork> = SubNetwork::ALL.into_iter().collect();
        if self.frozen.intersection(&self.trainable).next().is_some() {
            return Err(CoreError::InvalidArgument("a sub-network cannot be both frozen and trainable".into()));
        }
        if self.frozen.union(&self.trainable).copied().collect::<BTreeSet<_>>() != all {
            return Err(CoreError::InvalidArgument("freeze mask must cover every sub-network".into()));
        }
        Ok(())
    }

    pub fn is_rate_fixing(&self) -> bool {
        self.validate().is_ok() && SubNetwork::RATE_DETERMINING.iter().all(|s| self.frozen.contains(s))
    }
}
