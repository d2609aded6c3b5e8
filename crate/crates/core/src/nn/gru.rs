use dimnmt_tensor::{ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use super::{uniform_param, Ctx};
use crate::error::Result;
use dimnmt_tensor::ParamId;

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// The three input matrices are stored side by side (`w_x`, `input × 3d`)
/// so a whole sequence can be projected with one product.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_x: ParamId,
    pub b: ParamId,
    pub u_zr: ParamId,
    pub u_h: ParamId,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        input: usize,
        hidden: usize,
        range: f64,
    ) -> Result<Self> {
        Ok(Self {
            w_x: uniform_param(store, rng, &format!("{prefix}.w_x"), input, 3 * hidden, range)?,
            b: uniform_param(store, rng, &format!("{prefix}.b"), 1, 3 * hidden, range)?,
            u_zr: uniform_param(store, rng, &format!("{prefix}.u_zr"), hidden, 2 * hidden, range)?,
            u_h: uniform_param(store, rng, &format!("{prefix}.u_h"), hidden, hidden, range)?,
            input,
            hidden,
        })
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    /// `x·W + b` for every row of `x` at once.
    pub fn project_inputs(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w_x), ctx.p(self.b));
        let xw = ctx.graph.matmul(x, w)?;
        Ok(ctx.graph.add(xw, b)?)
    }

    /// One step from an already projected input row.
    pub fn step_projected(&self, ctx: &mut Ctx, xw: Var, h: Var) -> Result<Var> {
        let d = self.hidden;
        let (u_zr, u_h) = (ctx.p(self.u_zr), ctx.p(self.u_h));
        let g = &mut ctx.graph;
        let hu = g.matmul(h, u_zr)?;
        let x_zr = g.slice_cols(xw, 0, 2 * d)?;
        let pre = g.add(x_zr, hu)?;
        let zr = g.sigmoid(pre)?;
        let z = g.slice_cols(zr, 0, d)?;
        let r = g.slice_cols(zr, d, d)?;
        let x_h = g.slice_cols(xw, 2 * d, d)?;
        let rh = g.mul(r, h)?;
        let rhu = g.matmul(rh, u_h)?;
        let cand_pre = g.add(x_h, rhu)?;
        let cand = g.tanh(cand_pre)?;
        let delta = g.sub(cand, h)?;
        let step = g.mul(z, delta)?;
        Ok(g.add(h, step)?)
    }

    pub fn step(&self, ctx: &mut Ctx, x: Var, h: Var) -> Result<Var> {
        let xw = self.project_inputs(ctx, x)?;
        self.step_projected(ctx, xw, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dimnmt_tensor::Tensor;
    use rand::SeedableRng;

    fn cell(range: f64) -> (ParamStore, GruCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = GruCell::new(&mut store, &mut rng, "g", 2, 3, range).unwrap();
        (store, c)
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let (store, c) = cell(0.0);
        let mut ctx = Ctx::inference(&store);
        let x = ctx.graph.constant(Tensor::row(vec![0.3, -0.7]).unwrap());
        let h = ctx.graph.constant(Tensor::row(vec![1.0, -2.0, 0.5]).unwrap());
        let out = c.step(&mut ctx, x, h).unwrap();
        assert_eq!(ctx.graph.value(out).data(), &[0.5, -1.0, 0.25]);
    }

    #[test]
    fn zero_state_zero_weights_stays_zero() {
        let (store, c) = cell(0.0);
        let mut ctx = Ctx::inference(&store);
        let x = ctx.graph.constant(Tensor::row(vec![0.3, -0.7]).unwrap());
        let h = ctx.zeros(1, 3);
        let out = c.step(&mut ctx, x, h).unwrap();
        assert!(ctx.graph.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_is_bounded_by_convex_combination() {
        let (store, c) = cell(2.0);
        let mut ctx = Ctx::inference(&store);
        for k in 0..20 {
            let s = k as f64 - 10.0;
            let x = ctx.graph.constant(Tensor::row(vec![s, -s * 0.5]).unwrap());
            let h = ctx.graph.constant(Tensor::row(vec![s * 0.3, 1.5, -0.2 * s]).unwrap());
            let bound = ctx.graph.value(h).max_abs().max(1.0);
            let out = c.step(&mut ctx, x, h).unwrap();
            assert!(ctx.graph.value(out).max_abs() <= bound + 1e-12);
        }
    }
}
