//! Multi-head additive attention split into Address and Read.
//!
//! Head `h` scores key `i` as `v_hᵀ · tanh(q·W_q + k_i·W_k)[h-slice]` and
//! normalizes over the unmasked keys. Reading takes, per head, the weighted
//! sum of that head's slice of the values, concatenates the heads and
//! applies the output projection `W_o`.

use dimnmt_tensor::{Axis, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{uniform_param, Ctx};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct AdditiveAttention {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub v: ParamId,
    pub w_o: ParamId,
    heads: usize,
}

/// Keys with their projection cached for repeated addressing.
#[derive(Clone, Debug)]
pub struct Keys {
    pub keys: Var,
    projected: Var,
    mask: Option<Vec<bool>>,
}

impl Keys {
    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }
}

/// Attention weights of one query.
#[derive(Clone, Copy, Debug)]
pub struct Addressed {
    /// `n × H`, each column a distribution over keys.
    pub per_head: Var,
    /// `n × 1` head mean, the single distribution handed to memory updates.
    pub mean: Var,
}

impl AdditiveAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        query: usize,
        key: usize,
        hidden: usize,
        out: usize,
        heads: usize,
        range: f64,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) || !key.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{prefix}: {heads} heads must divide attention size {hidden} and key size {key}"
            )));
        }
        Ok(Self {
            w_q: uniform_param(store, rng, &format!("{prefix}.w_q"), query, hidden, range)?,
            w_k: uniform_param(store, rng, &format!("{prefix}.w_k"), key, hidden, range)?,
            v: uniform_param(store, rng, &format!("{prefix}.v"), heads, hidden / heads, range)?,
            w_o: uniform_param(store, rng, &format!("{prefix}.w_o"), key, out, range)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn prepare(&self, ctx: &mut Ctx, keys: Var, mask: Option<&[bool]>) -> Result<Keys> {
        let w_k = ctx.p(self.w_k);
        let projected = ctx.graph.matmul(keys, w_k)?;
        Ok(Keys {
            keys,
            projected,
            mask: mask.map(<[bool]>::to_vec),
        })
    }

    /// Content-based addressing of `query` (`1 × d_q`) against `keys`.
    pub fn address(&self, ctx: &mut Ctx, query: Var, keys: &Keys) -> Result<Addressed> {
        if keys.mask.as_ref().is_some_and(|m| !m.iter().any(|&b| b)) {
            return Err(Error::Usage("attention over fully masked keys".into()));
        }
        let (w_q, v) = (ctx.p(self.w_q), ctx.p(self.v));
        let g = &mut ctx.graph;
        let q = g.matmul(query, w_q)?;
        let pre = g.add(keys.projected, q)?;
        let t = g.tanh(pre)?;
        let scores = g.head_scores(t, v)?;
        let per_head = g.softmax_masked(scores, Axis::Rows, keys.mask.as_deref())?;
        let mean = if self.heads == 1 {
            per_head
        } else {
            let avg = g.constant(Tensor::full(&[self.heads, 1], 1.0 / self.heads as f64));
            g.matmul(per_head, avg)?
        };
        Ok(Addressed { per_head, mean })
    }

    /// Weighted per-head read of `values`, projected by `W_o`.
    pub fn read(&self, ctx: &mut Ctx, weights: Var, values: Var) -> Result<Var> {
        let w_o = ctx.p(self.w_o);
        let c = ctx.graph.head_read(weights, values)?;
        Ok(ctx.graph.matmul(c, w_o)?)
    }

    /// Address followed by Read of the keys themselves.
    pub fn attend(&self, ctx: &mut Ctx, query: Var, keys: &Keys) -> Result<(Addressed, Var)> {
        let a = self.address(ctx, query, keys)?;
        let c = self.read(ctx, a.per_head, keys.keys)?;
        Ok((a, c))
    }
}
