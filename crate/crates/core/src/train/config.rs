use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Warmup steps `p`.
    pub warmup: u64,
    /// Decay start `s`.
    pub decay_start: u64,
    /// Decay end `e`.
    pub decay_end: u64,
    /// Replica count `n` of the schedule; execution stays single-process.
    pub replicas: u32,
    /// Multiplies `p`, `s` and `e`.
    pub schedule_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    /// Agreement coefficient.
    pub lambda: f64,
    /// Padded tokens per batch and side, BOS/EOS included.
    pub token_budget: usize,
    pub max_steps: u64,
    /// Save a checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub no_agreement: bool,
    pub no_update: bool,
    pub no_dim: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            warmup: 500,
            decay_start: 8000,
            decay_end: 64000,
            replicas: 1,
            schedule_scale: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            clip_norm: 5.0,
            label_smoothing: 0.1,
            lambda: 1.0,
            token_budget: 4096,
            max_steps: 10_000,
            checkpoint_every: 1000,
            no_agreement: false,
            no_update: false,
            no_dim: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return err("train.lr0 must be positive");
        }
        if self.warmup == 0 || self.decay_start == 0 || self.decay_end == 0 {
            return err("train.warmup, train.decay_start and train.decay_end must be positive");
        }
        if self.decay_start >= self.decay_end {
            return err("train.decay_start must be below train.decay_end");
        }
        if self.replicas == 0 {
            return err("train.replicas must be at least 1");
        }
        if self.schedule_scale.is_nan() || self.schedule_scale <= 0.0 {
            return err("train.schedule_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("train.beta1 and train.beta2 must lie in [0, 1)");
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return err("train.eps and train.clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return err("train.label_smoothing must lie in [0, 1)");
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return err("train.lambda must be non-negative");
        }
        if self.token_budget < 3 {
            return err("train.token_budget must be at least 3");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Agreement weight after the ablation flag.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_agreement {
            0.0
        } else {
            self.lambda
        }
    }
}
