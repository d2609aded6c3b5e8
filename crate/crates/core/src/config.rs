//! The run configuration: one TOML file with `[model]`, `[train]`,
//! `[data]` and `[decode]` tables plus a top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DimMode, ModelConfig};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Tokenized training source, one sentence per line.
    pub train_source: Option<PathBuf>,
    pub train_target: Option<PathBuf>,
    pub valid_source: Option<PathBuf>,
    pub valid_target: Option<PathBuf>,
    /// Vocabulary files; built from the training data when absent.
    pub src_vocab: Option<PathBuf>,
    pub tgt_vocab: Option<PathBuf>,
    /// Maximum vocabulary size when building, reserved symbols included.
    pub max_vocab: Option<usize>,
    /// BPE models applied to raw text at translation time.
    pub src_bpe: Option<PathBuf>,
    pub tgt_bpe: Option<PathBuf>,
    /// Checkpoints, vocabularies and the metrics log go here.
    pub out_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_source: None,
            train_target: None,
            valid_source: None,
            valid_target: None,
            src_vocab: None,
            tgt_vocab: None,
            max_vocab: None,
            src_bpe: None,
            tgt_bpe: None,
            out_dir: PathBuf::from("run"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    /// Length normalization exponent.
    pub alpha: f64,
    /// Lowercase before BLEU counting.
    pub case_insensitive: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam: 10,
            alpha: 1.0,
            case_insensitive: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub decode: DecodeConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Applies the ablation flags to the model section and validates
    /// everything. Vocabulary sizes must already be filled in.
    pub fn resolve(mut self) -> Result<Self> {
        if self.train.no_dim {
            self.model.dim = false;
        }
        self.model.validate()?;
        self.train.validate()?;
        if self.decode.beam == 0 {
            return Err(Error::Config("decode.beam must be at least 1".into()));
        }
        if self.decode.alpha.is_nan() || self.decode.alpha < 0.0 {
            return Err(Error::Config("decode.alpha must be non-negative".into()));
        }
        Ok(self)
    }

    pub fn dim_mode(&self) -> DimMode {
        if self.train.no_update {
            DimMode::NoUpdate
        } else {
            DimMode::Full
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig {
            seed: 17,
            ..RunConfig::default()
        };
        c.model.src_vocab_size = 20;
        c.data.train_source = Some("a/b.txt".into());
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn no_dim_flag_removes_memory() {
        let mut c = RunConfig::default();
        c.model.src_vocab_size = 10;
        c.model.tgt_vocab_size = 10;
        c.train.no_dim = true;
        assert!(!c.resolve().unwrap().model.dim);
    }

    #[test]
    fn invalid_values_are_rejected_with_key() {
        let mut c = RunConfig::default();
        c.model.src_vocab_size = 10;
        c.model.tgt_vocab_size = 10;
        c.train.label_smoothing = 1.0;
        let err = c.resolve().unwrap_err().to_string();
        assert!(err.contains("train.label_smoothing"), "{err}");
    }
}
