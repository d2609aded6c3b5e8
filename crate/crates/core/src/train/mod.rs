//! Joint objective, optimizer, schedule, checkpoints and the training loop.

mod adam;
mod checkpoint;
mod config;
mod loss;
mod schedule;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::TrainConfig;
pub use loss::{agreement_l2, agreement_sum, joint_loss, smoothed_nll, smoothed_nll_sum, JointLoss, LossWeights};
pub use schedule::lr_at;
pub use trainer::{stream_rng, StepMetrics, Trainer};

use crate::error::Result;
use crate::nn::{Ctx, Model};
use crate::text::{SentencePair, EOS};

/// Fraction of target positions (EOS included) where the teacher-forced
/// left-to-right argmax equals the reference, without dropout.
pub fn teacher_forced_accuracy(model: &Model, pairs: &[SentencePair]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for p in pairs {
        let mut ctx = Ctx::inference(&model.params);
        let mut src = p.source.clone();
        src.push(EOS);
        let f = model.forward_sentence(&mut ctx, &src, &p.target)?;
        let logits = ctx.graph.value(f.l2r_logits);
        for (t, &gold) in f.l2r_targets.iter().enumerate() {
            let row = logits.row_slice(t);
            let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            hits += usize::from(best == gold);
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
}
