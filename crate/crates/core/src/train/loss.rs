//! Label-smoothed likelihood, logit agreement and their combination.

use dimnmt_tensor::{Axis, Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::SentenceForward;

/// Summed cross-entropy of `logits` (`steps × V`) against the smoothed
/// targets `q = (1 − u)·onehot(gold) + u/V`. Rows where `mask` is false are
/// skipped. Returns the sum and the number of rows counted.
pub fn smoothed_nll_sum(
    g: &mut Graph,
    logits: Var,
    gold: &[usize],
    u: f64,
    mask: Option<&[bool]>,
) -> Result<(Var, usize)> {
    let (steps, vocab) = match g.shape(logits) {
        &[r, c] => (r, c),
        s => return Err(Error::Dimension(format!("logits must be a matrix, got {s:?}"))),
    };
    if gold.len() != steps || mask.is_some_and(|m| m.len() != steps) {
        return Err(Error::Dimension(format!(
            "{steps} logit rows but {} gold ids",
            gold.len()
        )));
    }
    if !(0.0..1.0).contains(&u) {
        return Err(Error::Usage(format!("label smoothing must lie in [0, 1), got {u}")));
    }
    let mut q = vec![0.0; steps * vocab];
    let mut count = 0;
    for (t, &y) in gold.iter().enumerate() {
        if mask.is_some_and(|m| !m[t]) {
            continue;
        }
        if y >= vocab {
            return Err(Error::Dimension(format!(
                "gold id {y} outside vocabulary of size {vocab}"
            )));
        }
        let row = &mut q[t * vocab..(t + 1) * vocab];
        row.fill(u / vocab as f64);
        row[y] += 1.0 - u;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Usage("every position of the loss is masked".into()));
    }
    let q = g.constant(Tensor::matrix(steps, vocab, q)?);
    let logp = g.log_softmax(logits, Axis::Cols)?;
    let weighted = g.mul(logp, q)?;
    let total = g.sum(weighted)?;
    Ok((g.scale(total, -1.0)?, count))
}

/// Mean label-smoothed cross-entropy over unmasked rows.
pub fn smoothed_nll(g: &mut Graph, logits: Var, gold: &[usize], u: f64, mask: Option<&[bool]>) -> Result<Var> {
    let (sum, count) = smoothed_nll_sum(g, logits, gold, u, mask)?;
    Ok(g.scale(sum, 1.0 / count as f64)?)
}

/// Summed squared difference between the first `m` rows of the
/// right-to-left logits, time-reversed, and the first `m` rows of the
/// left-to-right logits. Returns `None` for `m = 0`.
pub fn agreement_sum(g: &mut Graph, r2l: Var, l2r: Var, m: usize) -> Result<Option<Var>> {
    if g.shape(r2l) != g.shape(l2r) || g.shape(r2l)[0] < m {
        return Err(Error::Dimension(format!(
            "agreement needs equal logit shapes with at least {m} rows, got {:?} and {:?}",
            g.shape(r2l),
            g.shape(l2r)
        )));
    }
    if m == 0 {
        return Ok(None);
    }
    let a = g.slice_rows(r2l, 0, m)?;
    let a = g.reverse_rows(a)?;
    let b = g.slice_rows(l2r, 0, m)?;
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(Some(g.sum(sq)?))
}

/// Mean over `m × V` of the squared differences described at
/// [`agreement_sum`], with `m` the row count of both inputs.
pub fn agreement_l2(g: &mut Graph, r2l: Var, l2r: Var) -> Result<Var> {
    let [m, v] = *g.shape(l2r) else {
        return Err(Error::Dimension("agreement needs matrices".into()));
    };
    match agreement_sum(g, r2l, l2r, m)? {
        Some(s) => Ok(g.scale(s, 1.0 / (m * v) as f64)?),
        None => Ok(g.constant(Tensor::scalar(0.0))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub label_smoothing: f64,
    /// Agreement coefficient; zero drops the term from the graph.
    pub lambda: f64,
}

/// The batch objective and its parts as plain numbers.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub r2l_nll: f64,
    pub l2r_nll: f64,
    pub agreement: f64,
    /// Target positions per direction, EOS included.
    pub tokens: usize,
}

/// `nll(R2L) + nll(L2R) + λ·agreement` over a batch. Each likelihood is a
/// mean per target token, the agreement a mean over all compared logits.
pub fn joint_loss(g: &mut Graph, outputs: &[SentenceForward], w: LossWeights) -> Result<JointLoss> {
    if outputs.is_empty() {
        return Err(Error::Usage("joint loss over an empty batch".into()));
    }
    let mut r2l_parts = Vec::with_capacity(outputs.len());
    let mut l2r_parts = Vec::with_capacity(outputs.len());
    let mut agree_parts = Vec::new();
    let mut tokens = 0;
    let mut compared = 0;
    for f in outputs {
        let (a, n) = smoothed_nll_sum(g, f.r2l_logits, &f.r2l_targets, w.label_smoothing, None)?;
        let (b, _) = smoothed_nll_sum(g, f.l2r_logits, &f.l2r_targets, w.label_smoothing, None)?;
        r2l_parts.push(a);
        l2r_parts.push(b);
        tokens += n;
        if w.lambda > 0.0 {
            if let Some(s) = agreement_sum(g, f.r2l_logits, f.l2r_logits, f.gold_len())? {
                agree_parts.push(s);
                compared += f.gold_len() * g.shape(f.l2r_logits)[1];
            }
        }
    }
    let mean = |g: &mut Graph, parts: &[Var], n: usize| -> Result<Var> {
        let stacked = g.concat_rows(parts)?;
        let s = g.sum(stacked)?;
        Ok(g.scale(s, 1.0 / n as f64)?)
    };
    let r2l = mean(g, &r2l_parts, tokens)?;
    let l2r = mean(g, &l2r_parts, tokens)?;
    let mut total = g.add(r2l, l2r)?;
    let mut agreement = 0.0;
    if !agree_parts.is_empty() {
        let a = mean(g, &agree_parts, compared)?;
        agreement = g.value(a).item();
        let weighted = g.scale(a, w.lambda)?;
        total = g.add(total, weighted)?;
    }
    Ok(JointLoss {
        total,
        r2l_nll: g.value(r2l).item(),
        l2r_nll: g.value(l2r).item(),
        agreement,
        tokens,
    })
}
