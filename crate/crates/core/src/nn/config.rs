use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which right-to-left states fill the memory during training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemorySource {
    /// States of a greedy decode, as at inference time.
    #[default]
    Greedy,
    /// States of the teacher-forced pass over the reversed reference.
    TeacherForced,
}

/// How the left-to-right decoder uses the memory at run time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DimMode {
    /// Address, read and update.
    Full,
    /// Address and read a memory that never changes.
    NoUpdate,
    /// Memory unused; with DIM parameters present the target context is zero.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
    /// Word embedding size (tied with the output projection).
    pub embed: usize,
    /// Encoder GRU size per direction; annotations are twice this wide.
    pub hidden: usize,
    /// Decoder state size.
    pub dec_hidden: usize,
    /// Hidden size of the additive attention scorer.
    pub attention: usize,
    pub heads: usize,
    pub dropout_embed: f64,
    pub dropout_encoder: f64,
    pub dropout_readout: f64,
    pub init_range: f64,
    /// Build the memory module into the left-to-right decoder.
    pub dim: bool,
    /// Biases on the forget/add gates.
    pub dim_gate_bias: bool,
    /// Let gradients from memory reads reach the right-to-left decoder.
    pub dim_grad_to_r2l: bool,
    pub memory_source: MemorySource,
    /// Decode length cap is `ceil(ratio · n) + offset` for `n` source tokens.
    pub max_len_ratio: f64,
    pub max_len_offset: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            src_vocab_size: 0,
            tgt_vocab_size: 0,
            embed: 64,
            hidden: 64,
            dec_hidden: 64,
            attention: 64,
            heads: 4,
            dropout_embed: 0.5,
            dropout_encoder: 0.3,
            dropout_readout: 0.5,
            init_range: 0.08,
            dim: true,
            dim_gate_bias: true,
            dim_grad_to_r2l: false,
            memory_source: MemorySource::Greedy,
            max_len_ratio: 1.5,
            max_len_offset: 5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.src_vocab_size <= crate::text::RESERVED.len() || self.tgt_vocab_size <= crate::text::RESERVED.len() {
            return err(format!(
                "model.src_vocab_size / model.tgt_vocab_size must exceed the {} reserved symbols",
                crate::text::RESERVED.len()
            ));
        }
        for (key, v) in [
            ("model.embed", self.embed),
            ("model.hidden", self.hidden),
            ("model.dec_hidden", self.dec_hidden),
            ("model.attention", self.attention),
            ("model.heads", self.heads),
        ] {
            if v == 0 {
                return err(format!("{key} must be positive"));
            }
        }
        for (key, width) in [
            ("model.attention", self.attention),
            ("model.dec_hidden", self.dec_hidden),
            ("2 * model.hidden", 2 * self.hidden),
        ] {
            if width % self.heads != 0 {
                return err(format!("model.heads = {} must divide {key} = {width}", self.heads));
            }
        }
        for (key, p) in [
            ("model.dropout_embed", self.dropout_embed),
            ("model.dropout_encoder", self.dropout_encoder),
            ("model.dropout_readout", self.dropout_readout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return err(format!("{key} must lie in [0, 1), got {p}"));
            }
        }
        if self.max_len_ratio < 0.0 {
            return err("model.max_len_ratio must be non-negative".into());
        }
        Ok(())
    }

    /// Decoding step cap for a source of `n` tokens.
    pub fn length_cap(&self, n: usize) -> usize {
        (self.max_len_ratio * n as f64).ceil() as usize + self.max_len_offset
    }
}
