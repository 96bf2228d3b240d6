//! Training configuration file.
//!
//! TOML with sections `[model]`, `[train]`, `[mfa]`, `[loss]` and `[data]`.
//! Every section is optional and falls back to defaults; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::loss::LossConfig;
use crate::mfa::MfaConfig;
use crate::model::heads::FinalWeights;
use crate::model::{Architecture, ModelConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub architecture: Architecture,
    /// Divides every channel plan; 1 is the full network, 8 the micro one.
    pub width_divisor: usize,
    pub se_reduction: usize,
    pub attention_heads: usize,
    pub head_kernel: usize,
    pub fcb_input: usize,
    pub final_weights: [f64; 4],
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cascade,
            width_divisor: 1,
            se_reduction: 8,
            attention_heads: 4,
            head_kernel: 1,
            fcb_input: 224,
            final_weights: [1.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps, even mid-schedule.
    pub max_iterations: Option<usize>,
    /// Fraction of training cases held out to pick the best checkpoint.
    /// Zero selects on the training DSC instead.
    pub validation_fraction: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            max_iterations: None,
            validation_fraction: 0.2,
        }
    }
}

/// Generated shapes dataset used instead of a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub cases: usize,
    pub classes: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self { cases: 16, classes: 3, image_size: 256, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Dataset directory written by `Dataset::write`.
    pub path: Option<PathBuf>,
    pub synthetic: Option<SynthSection>,
    /// Expected class count including background; checked against the data.
    pub classes: Option<usize>,
    /// Partition used for training.
    pub partition: String,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: None, synthetic: None, classes: None, partition: "train".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelSection,
    pub train: TrainSection,
    pub mfa: MfaConfig,
    pub loss: LossConfig,
    pub data: DataSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn fingerprint(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", t.learning_rate)));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", t.weight_decay)));
        }
        if t.max_iterations == Some(0) {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(0.0..1.0).contains(&t.validation_fraction) {
            return Err(Error::Config(format!("validation_fraction must lie in [0, 1), got {}", t.validation_fraction)));
        }
        let m = &self.model;
        if m.width_divisor == 0 || m.se_reduction == 0 || m.attention_heads == 0 {
            return Err(Error::Config("width_divisor, se_reduction and attention_heads must be positive".into()));
        }
        if m.final_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("final_weights must be finite".into()));
        }
        if self.data.path.is_some() && self.data.synthetic.is_some() {
            return Err(Error::Config("set either data.path or data.synthetic, not both".into()));
        }
        if let Some(c) = self.data.classes {
            if c < 2 {
                return Err(Error::Config(format!("data.classes must be at least 2, got {c}")));
            }
        }
        self.mfa.validate()?;
        self.loss.validate()
    }

    /// Model configuration for a dataset with `classes` labels.
    pub fn model_config(&self, classes: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let mut cfg = ModelConfig::scaled(m.architecture, classes, m.width_divisor, m.se_reduction);
        cfg.attention_heads = m.attention_heads;
        cfg.head_kernel = m.head_kernel;
        cfg.fcb_input = m.fcb_input;
        cfg.final_weights = FinalWeights(m.final_weights);
        cfg.validate()?;
        Ok(cfg)
    }
}
