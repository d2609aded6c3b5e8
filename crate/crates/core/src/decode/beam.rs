use dimnmt_tensor::Var;

use crate::error::{Error, Result};
use crate::nn::{can_emit, Ctx, DecoderInput, DimMemory, DimMode, Model};
use crate::text::{BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamOptions {
    pub beam: usize,
    /// Length normalization exponent; 0 ranks by raw log-probability.
    pub alpha: f64,
    /// Maximum number of decoder steps, EOS included.
    pub cap: usize,
}

/// A partial or finished left-to-right candidate.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    /// Emitted tokens, EOS excluded.
    pub tokens: Vec<usize>,
    pub state: Var,
    pub logprob: f64,
    /// Private memory, advanced once per step.
    pub memory: Option<DimMemory>,
    pub finished: bool,
    /// Whether the hypothesis ended by emitting EOS rather than at the cap.
    pub ended: bool,
    /// Head-mean source attention, one row per step.
    pub src_attention: Vec<Vec<f64>>,
    /// Head-mean memory attention, one row per step.
    pub tgt_attention: Vec<Vec<f64>>,
}

impl Hypothesis {
    /// Decoder steps taken, the EOS step included.
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.ended)
    }

    pub fn score(&self, alpha: f64) -> f64 {
        length_normalized(self.logprob, self.steps(), alpha)
    }
}

pub fn length_normalized(logprob: f64, steps: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        logprob
    } else {
        logprob / (steps.max(1) as f64).powf(alpha)
    }
}

/// Log-softmax of one row of logits.
pub(crate) fn log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

#[derive(Clone, Debug)]
pub struct BeamOutput {
    pub best: Hypothesis,
    /// Every finished candidate in the order it finished.
    pub finished: Vec<Hypothesis>,
}

/// Beam search over left-to-right steps.
///
/// Each step expands every live hypothesis by every emittable token and
/// keeps the `beam − |finished|` best by cumulative log-probability.
/// Candidates ending in EOS move to the finished set; the search stops once
/// it holds `beam` entries, nothing is alive, or `cap` steps were taken, in
/// which case the live candidates finish as they are. The result maximizes
/// `logprob / steps^alpha`.
pub fn beam_l2r(
    model: &Model,
    ctx: &mut Ctx,
    input: &DecoderInput,
    memory: Option<DimMemory>,
    opts: BeamOptions,
) -> Result<BeamOutput> {
    if opts.beam == 0 {
        return Err(Error::Usage("beam size must be at least 1".into()));
    }
    let mode = if model.has_dim() { model.dim_mode } else { DimMode::Off };
    if mode != DimMode::Off && memory.is_none() {
        return Err(Error::Usage(
            "left-to-right search needs the right-to-left memory".into(),
        ));
    }
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        state: input.init,
        logprob: 0.0,
        memory,
        finished: false,
        ended: false,
        src_attention: Vec::new(),
        tgt_attention: Vec::new(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let cap = opts.cap.max(1);
    for t in 0..cap {
        let mut expanded = Vec::with_capacity(alive.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, h) in alive.iter().enumerate() {
            let mut mem = h.memory.clone();
            let prev = h.tokens.last().copied().unwrap_or(BOS);
            let out = model.l2r.step(ctx, input, prev, h.state, mem.as_mut(), mode)?;
            let logp = log_probs(ctx.graph.value(out.logits).data());
            for (tok, lp) in logp.iter().enumerate() {
                if can_emit(tok) {
                    cands.push((h.logprob + lp, i, tok));
                }
            }
            let src = ctx.graph.value(out.src.mean).data().to_vec();
            let tgt = out.tgt.map(|a| ctx.graph.value(a.mean).data().to_vec());
            expanded.push((out.state, mem, src, tgt));
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let room = opts.beam - finished.len();
        let mut next = Vec::with_capacity(room);
        for &(lp, i, tok) in cands.iter().take(room) {
            let parent = &alive[i];
            let (state, mem, src, tgt) = &expanded[i];
            let mut child = Hypothesis {
                tokens: parent.tokens.clone(),
                state: *state,
                logprob: lp,
                memory: mem.clone(),
                finished: false,
                ended: false,
                src_attention: parent.src_attention.clone(),
                tgt_attention: parent.tgt_attention.clone(),
            };
            child.src_attention.push(src.clone());
            if let Some(tgt) = tgt {
                child.tgt_attention.push(tgt.clone());
            }
            if tok == EOS {
                child.finished = true;
                child.ended = true;
                finished.push(child);
            } else {
                child.tokens.push(tok);
                next.push(child);
            }
        }
        alive = next;
        if alive.is_empty() || finished.len() >= opts.beam {
            alive.clear();
            break;
        }
        if t + 1 == cap {
            for mut h in alive.drain(..) {
                h.finished = true;
                finished.push(h);
            }
        }
    }
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.score(opts.alpha).total_cmp(&b.score(opts.alpha)).then(j.cmp(i)))
        .map(|(_, h)| h.clone())
        .expect("search always finishes at least one hypothesis");
    Ok(BeamOutput { best, finished })
}
