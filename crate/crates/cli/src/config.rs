//! Run configuration read from a TOML file.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use shiftcoref::corpus::SynthConfig;
use shiftcoref::incremental::DEFAULT_BUDGET;
use shiftcoref::model::{config_hash, ModelConfig, TrainConfig};

/// Training never runs longer than this many epochs from the command line.
pub const MAX_EPOCHS: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    /// Sentences decoded per window.
    pub k: usize,
    /// Active plus cached tokens visible per window.
    pub budget: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            k: 1,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Every setting a command depends on. The top-level seed overrides the
/// per-section seeds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub window: WindowConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Loads `path` (or the defaults), applies `seed`, and validates.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config = match path {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Self::from_toml(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = seed {
            config.seed = seed;
        }
        config.synth.seed = config.seed;
        config.model.seed = config.seed;
        config.train.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let positive = [
            ("model.encoder.buckets", m.encoder.buckets),
            ("model.encoder.dim", m.encoder.dim),
            ("model.feature_dim", m.feature_dim),
            ("model.mention_hidden", m.mention_hidden),
            ("model.coref_hidden", m.coref_hidden),
            ("model.history_window", m.history_window),
            ("model.max_span_width", m.max_span_width),
            ("model.max_speakers", m.max_speakers),
            ("train.epochs", self.train.epochs),
            ("window.k", self.window.k),
            ("window.budget", self.window.budget),
        ];
        for (name, value) in positive {
            if value == 0 {
                bail!("{name} must be positive");
            }
        }
        if self.train.epochs > MAX_EPOCHS {
            bail!(
                "train.epochs is {}, at most {MAX_EPOCHS} allowed",
                self.train.epochs
            );
        }
        if !(self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite()) {
            bail!("train.learning_rate must be finite and non-negative");
        }
        if self.train.clip_norm.is_some_and(|c| c.is_nan() || c <= 0.0) {
            bail!("train.clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&m.dropout) {
            bail!("model.dropout must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}
