//! Dynamic interaction memory over right-to-left decoder states.
//!
//! The memory holds one row per right-to-left step. At each left-to-right
//! step the decoder addresses and reads it like any attention source, then
//! rewrites it:
//!
//! ```text
//! F = σ(s_prev·W_f + b_f)        A = σ(s_prev·W_a + b_a)
//! row_i ← row_i ⊙ (1 − a_i·F) + a_i·A
//! ```
//!
//! `a_i` is the head-mean read weight of row `i`; `F` and `A` are shared by
//! all rows at one step.

use dimnmt_tensor::{ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::{uniform_param, AdditiveAttention, Addressed, Ctx};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct DimGates {
    pub w_f: ParamId,
    pub b_f: Option<ParamId>,
    pub w_a: ParamId,
    pub b_a: Option<ParamId>,
}

impl DimGates {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        state: usize,
        width: usize,
        bias: bool,
        range: f64,
    ) -> Result<Self> {
        let w_f = uniform_param(store, rng, &format!("{prefix}.w_f"), state, width, range)?;
        let b_f = bias
            .then(|| uniform_param(store, rng, &format!("{prefix}.b_f"), 1, width, range))
            .transpose()?;
        let w_a = uniform_param(store, rng, &format!("{prefix}.w_a"), state, width, range)?;
        let b_a = bias
            .then(|| uniform_param(store, rng, &format!("{prefix}.b_a"), 1, width, range))
            .transpose()?;
        Ok(Self { w_f, b_f, w_a, b_a })
    }

    /// Forget and add vectors for the previous left-to-right state.
    pub fn gates(&self, ctx: &mut Ctx, s_prev: Var) -> Result<(Var, Var)> {
        let forget = gate(ctx, s_prev, self.w_f, self.b_f)?;
        let add = gate(ctx, s_prev, self.w_a, self.b_a)?;
        Ok((forget, add))
    }
}

fn gate(ctx: &mut Ctx, s: Var, w: ParamId, b: Option<ParamId>) -> Result<Var> {
    let w = ctx.p(w);
    let mut pre = ctx.graph.matmul(s, w)?;
    if let Some(b) = b {
        let b = ctx.p(b);
        pre = ctx.graph.add(pre, b)?;
    }
    Ok(ctx.graph.sigmoid(pre)?)
}

/// Mutable memory owned by one decoding context.
///
/// Rows live on the tape as immutable nodes; an update records a new node
/// and rebinds `current`. A clone therefore evolves independently of the
/// original.
#[derive(Clone, Debug)]
pub struct DimMemory {
    snapshot: Var,
    current: Var,
    rows: usize,
    width: usize,
    step: usize,
}

impl DimMemory {
    /// Wraps an `m′ × d` matrix of right-to-left states.
    pub fn new(ctx: &Ctx, states: Var) -> Result<Self> {
        let shape = ctx.graph.shape(states);
        let [rows, width] = shape else {
            return Err(Error::Dimension(format!("memory must be a matrix, got {shape:?}")));
        };
        Ok(Self {
            snapshot: states,
            current: states,
            rows: *rows,
            width: *width,
            step: 0,
        })
    }

    pub fn from_rows(ctx: &mut Ctx, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Usage("memory needs at least one state".into()));
        }
        let states = ctx.graph.constant(Tensor::from_rows(rows)?);
        Self::new(ctx, states)
    }

    pub fn current(&self) -> Var {
        self.current
    }

    pub fn snapshot(&self) -> Var {
        self.snapshot
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of updates applied since construction or the last reset.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn reset(&mut self) {
        self.current = self.snapshot;
        self.step = 0;
    }

    /// Forget/add rewrite with explicit gate vectors.
    pub fn update_with(&mut self, ctx: &mut Ctx, weights: Var, forget: Var, add: Var) -> Result<()> {
        if ctx.graph.shape(weights) != [self.rows, 1] {
            return Err(Error::Dimension(format!(
                "memory update weights have shape {:?}, memory has {} rows",
                ctx.graph.shape(weights),
                self.rows
            )));
        }
        let g = &mut ctx.graph;
        let erase = g.matmul(weights, forget)?;
        let keep = g.one_minus(erase)?;
        let kept = g.mul(self.current, keep)?;
        let write = g.matmul(weights, add)?;
        self.current = g.add(kept, write)?;
        self.step += 1;
        Ok(())
    }

    /// Gated update driven by the previous left-to-right state.
    pub fn update(&mut self, ctx: &mut Ctx, gates: &DimGates, weights: Var, s_prev: Var) -> Result<()> {
        let (forget, add) = gates.gates(ctx, s_prev)?;
        self.update_with(ctx, weights, forget, add)
    }
}

/// Address/read parameters plus the update gates.
#[derive(Clone, Debug)]
pub struct Dim {
    pub attention: AdditiveAttention,
    pub gates: DimGates,
}

impl Dim {
    /// Address then read the current memory; returns the weights and the
    /// target-side context.
    pub fn address_read(&self, ctx: &mut Ctx, mem: &DimMemory, query: Var) -> Result<(Addressed, Var)> {
        let keys = self.attention.prepare(ctx, mem.current(), None)?;
        self.attention.attend(ctx, query, &keys)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn setup(bias: bool) -> (ParamStore, Dim) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let attention = AdditiveAttention::new(&mut store, &mut rng, "dim.att", 3, 3, 3, 3, 1, 0.5).unwrap();
        let gates = DimGates::new(&mut store, &mut rng, "dim", 3, 3, bias, 0.5).unwrap();
        (store, Dim { attention, gates })
    }

    fn rows() -> Vec<Vec<f64>> {
        vec![vec![0.5, -1.0, 2.0], vec![0.1, 0.2, -0.3]]
    }

    #[test]
    fn single_row_memory() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mem = DimMemory::from_rows(&mut ctx, &[vec![0.3, 0.1, -0.2]]).unwrap();
        let q = ctx.graph.constant(Tensor::row(vec![1.0, 0.0, -1.0]).unwrap());
        let (a, c) = dim.address_read(&mut ctx, &mem, q).unwrap();
        assert_eq!(ctx.graph.value(a.mean).data(), &[1.0]);
        let expect = Tensor::row(vec![0.3, 0.1, -0.2])
            .unwrap()
            .matmul(store.value(dim.attention.w_o))
            .unwrap();
        assert_eq!(ctx.graph.value(c), &expect);
    }

    #[test]
    fn repeated_query_is_deterministic() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let q = ctx.graph.constant(Tensor::row(vec![0.2, 0.4, 0.6]).unwrap());
        let (a1, c1) = dim.address_read(&mut ctx, &mem, q).unwrap();
        let (a2, c2) = dim.address_read(&mut ctx, &mem, q).unwrap();
        assert_eq!(ctx.graph.value(a1.mean), ctx.graph.value(a2.mean));
        assert_eq!(ctx.graph.value(c1), ctx.graph.value(c2));
        assert!((ctx.graph.value(a1.mean).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_memory_rejected() {
        let (store, _) = setup(true);
        let mut ctx = Ctx::inference(&store);
        assert!(matches!(DimMemory::from_rows(&mut ctx, &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_weights_leave_memory_unchanged() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mut mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let before = ctx.graph.value(mem.current()).clone();
        let w = ctx.zeros(2, 1);
        let s = ctx.graph.constant(Tensor::row(vec![3.0, -2.0, 1.0]).unwrap());
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        assert_eq!(ctx.graph.value(mem.current()), &before);
        assert_eq!(mem.step(), 1);
    }

    #[test]
    fn saturated_gates_overwrite_selected_row() {
        let (mut store, dim) = setup(true);
        for id in [dim.gates.w_f, dim.gates.w_a] {
            store.set_value(id, Tensor::zeros(&[3, 3])).unwrap();
        }
        for id in [dim.gates.b_f.unwrap(), dim.gates.b_a.unwrap()] {
            store.set_value(id, Tensor::full(&[1, 3], 60.0)).unwrap();
        }
        let mut ctx = Ctx::inference(&store);
        let mut mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let w = ctx.graph.constant(Tensor::column(vec![0.0, 1.0]).unwrap());
        let s = ctx.graph.constant(Tensor::row(vec![0.7, 0.1, -0.4]).unwrap());
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        let m = ctx.graph.value(mem.current());
        assert_eq!(m.row_slice(0), rows()[0].as_slice());
        for v in m.row_slice(1) {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_state_gives_half_gates() {
        let (mut store, dim) = setup(true);
        for id in [dim.gates.b_f.unwrap(), dim.gates.b_a.unwrap()] {
            store.set_value(id, Tensor::zeros(&[1, 3])).unwrap();
        }
        let mut ctx = Ctx::inference(&store);
        let mut mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let a = [0.3, 0.7];
        let w = ctx.graph.constant(Tensor::column(a.to_vec()).unwrap());
        let s = ctx.zeros(1, 3);
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        let m = ctx.graph.value(mem.current());
        for (i, row) in rows().iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                let expect = s * (1.0 - a[i] / 2.0) + a[i] / 2.0;
                assert!((m.get(i, j) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reset_restores_snapshot_and_replays() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mut mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let snap = ctx.graph.value(mem.snapshot()).clone();
        let w = ctx.graph.constant(Tensor::column(vec![0.4, 0.6]).unwrap());
        let s = ctx.graph.constant(Tensor::row(vec![0.5, 0.5, -0.5]).unwrap());
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        let first = ctx.graph.value(mem.current()).clone();
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        mem.reset();
        mem.reset();
        assert_eq!(ctx.graph.value(mem.current()), &snap);
        assert_eq!(mem.step(), 0);
        mem.update(&mut ctx, &dim.gates, w, s).unwrap();
        assert_eq!(ctx.graph.value(mem.current()), &first);
    }

    #[test]
    fn clones_evolve_independently() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mut a = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let b = a.clone();
        let before = ctx.graph.value(b.current()).clone();
        let w = ctx.graph.constant(Tensor::column(vec![1.0, 0.0]).unwrap());
        let s = ctx.graph.constant(Tensor::row(vec![1.0, 1.0, 1.0]).unwrap());
        a.update(&mut ctx, &dim.gates, w, s).unwrap();
        assert_ne!(ctx.graph.value(a.current()), &before);
        assert_eq!(ctx.graph.value(b.current()), &before);
    }

    #[test]
    fn wrong_weight_length_is_dimension_error() {
        let (store, dim) = setup(true);
        let mut ctx = Ctx::inference(&store);
        let mut mem = DimMemory::from_rows(&mut ctx, &rows()).unwrap();
        let w = ctx.zeros(3, 1);
        let s = ctx.zeros(1, 3);
        assert!(matches!(
            mem.update(&mut ctx, &dim.gates, w, s),
            Err(Error::Dimension(_))
        ));
    }
}
