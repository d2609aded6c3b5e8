use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{kernels, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis of a rank-2 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Axis 0: each column is reduced over its rows.
    Rows,
    /// Axis 1: each row is reduced over its columns.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { table: Var, ids: Vec<usize> },
    ReverseRows(Var),
    Sum(Var),
    Mean(Var),
    HeadScores { t: Var, v: Var },
    HeadRead { w: Var, values: Var },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Dynamic tape of tensor operations.
///
/// Nodes are appended in execution order, so parents always precede
/// their children and a reverse sweep is a valid topological order.
/// Values are never mutated after recording.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
    check_finite: bool,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn broadcast_compatible(lhs: &Tensor, rhs: &Tensor) -> bool {
    if lhs.shape() == rhs.shape() || rhs.numel() == 1 {
        return true;
    }
    matches!((lhs.shape(), rhs.shape()), ([_, c], [1, c2]) if c == c2)
}

/// Sums a full-size gradient down to the broadcast operand's shape.
fn reduce_to(full: &Tensor, target: &Tensor) -> Tensor {
    if full.shape() == target.shape() {
        return full.clone();
    }
    let n = target.numel();
    let mut out = vec![0.0; n];
    for (i, v) in full.data().iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(target.shape().to_vec(), out).expect("shape taken from a tensor")
}

impl Graph {
    /// A graph that records operations for differentiation.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            check_finite: false,
            params: Vec::new(),
            param_lookup: HashMap::new(),
        }
    }

    /// A graph that only evaluates; nothing is kept for a backward pass.
    pub fn inference() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Debug mode: every op result is checked for NaN/Inf and `log` rejects
    /// non-positive inputs.
    pub fn with_checks(mut self, enabled: bool) -> Self {
        self.check_finite = enabled;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameters registered on this graph, in registration order.
    pub fn params(&self) -> &[(ParamId, Var)] {
        &self.params
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A differentiable leaf that is not backed by a [`ParamStore`].
    pub fn variable(&mut self, value: Tensor) -> Var {
        let rg = self.grad_enabled;
        self.push_leaf(value, rg)
    }

    /// Registers (once per graph) a stored parameter as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let rg = self.grad_enabled;
        let v = self.push_leaf(store.value(id).clone(), rg);
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    /// Copies the value of `v` into a new leaf that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            other => Err(TensorError::ShapeMismatch {
                op,
                lhs: other.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b], "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul_bt")?;
        let (n, k2) = self.dims(b, "matmul_bt")?;
        if k != k2 {
            return Err(self.mismatch("matmul_bt", a, b));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMulBt(a, b), &[a, b], "matmul_bt")
    }

    // ---- elementwise ----

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcast_compatible(ta, tb) {
            return Err(self.mismatch(name, a, b));
        }
        let n = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % n]))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale(a, factor), &[a], "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar(a), &[a], "add_scalar")
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a], "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), &[a], "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if self.check_finite && self.value(a).data().iter().any(|&x| x <= 0.0) {
            return Err(TensorError::Domain { op: "log" });
        }
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a), &[a], "log")
    }

    // ---- normalization ----

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax along `axis` where `mask[i] == false` excludes position `i`
    /// of every lane; excluded entries come out as exactly zero.
    pub fn softmax_masked(&mut self, x: Var, axis: Axis, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(x, "softmax")?;
        let extent = match axis {
            Axis::Rows => r,
            Axis::Cols => c,
        };
        if let Some(m) = mask {
            if m.len() != extent {
                return Err(TensorError::ShapeMismatch {
                    op: "softmax",
                    lhs: vec![r, c],
                    rhs: vec![m.len()],
                });
            }
            if !m.iter().any(|&b| b) {
                return Err(TensorError::Usage("softmax: every position is masked".into()));
            }
        }
        let keep = |i: usize| mask.is_none_or(|m| m[i]);
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let (lanes, stride, step) = match axis {
            Axis::Rows => (c, 1, c),
            Axis::Cols => (r, c, 1),
        };
        for lane in 0..lanes {
            let base = lane * stride;
            let idx = |i: usize| base + i * step;
            let max = (0..extent)
                .filter(|&i| keep(i))
                .map(|i| src[idx(i)])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in (0..extent).filter(|&i| keep(i)) {
                let e = (src[idx(i)] - max).exp();
                out[idx(i)] = e;
                total += e;
            }
            for i in (0..extent).filter(|&i| keep(i)) {
                out[idx(i)] /= total;
            }
        }
        self.push(Tensor::matrix(r, c, out)?, Op::Softmax(x, axis), &[x], "softmax")
    }

    pub fn log_softmax(&mut self, x: Var, axis: Axis) -> Result<Var> {
        let (r, c) = self.dims(x, "log_softmax")?;
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        let (lanes, stride, step, extent) = match axis {
            Axis::Rows => (c, 1, c, r),
            Axis::Cols => (r, c, 1, c),
        };
        for lane in 0..lanes {
            let base = lane * stride;
            let max = (0..extent)
                .map(|i| src[base + i * step])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + (0..extent)
                    .map(|i| (src[base + i * step] - max).exp())
                    .sum::<f64>()
                    .ln();
            for i in 0..extent {
                out[base + i * step] = src[base + i * step] - lse;
            }
        }
        self.push(Tensor::matrix(r, c, out)?, Op::LogSoftmax(x, axis), &[x], "log_softmax")
    }

    // ---- structure ----

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Usage("concat_cols of nothing".into()));
        };
        let (r, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p, "concat_cols")?;
            if pr != r {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(row));
            }
        }
        self.push(
            Tensor::matrix(r, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
            "concat_cols",
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(TensorError::Usage("concat_rows of nothing".into()));
        };
        let (_, c) = self.dims(first, "concat_rows")?;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p, "concat_rows")?;
            if pc != c {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += pr;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::matrix(rows, c, out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
            "concat_rows",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                index: start + len,
                extent: c,
            });
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in 0..r {
            out.extend_from_slice(&src.row_slice(row)[start..start + len]);
        }
        self.push(
            Tensor::matrix(r, len, out)?,
            Op::SliceCols { x, start },
            &[x],
            "slice_cols",
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                index: start + len,
                extent: r,
            });
        }
        let out = self.value(x).data()[start * c..(start + len) * c].to_vec();
        self.push(
            Tensor::matrix(len, c, out)?,
            Op::SliceRows { x, start },
            &[x],
            "slice_rows",
        )
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, 1)
    }

    /// Embedding lookup: one output row per id.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table, "gather_rows")?;
        if ids.is_empty() {
            return Err(TensorError::Usage("gather_rows with no ids".into()));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    index: id,
                    extent: r,
                });
            }
            out.extend_from_slice(src.row_slice(id));
        }
        let t = Tensor::matrix(ids.len(), c, out)?;
        self.push(
            t,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            "gather_rows",
        )
    }

    pub fn reverse_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims(x, "reverse_rows")?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(r * c);
        for row in (0..r).rev() {
            out.extend_from_slice(src.row_slice(row));
        }
        self.push(Tensor::matrix(r, c, out)?, Op::ReverseRows(x), &[x], "reverse_rows")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push(t, Op::Sum(x), &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let t = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push(t, Op::Mean(x), &[x], "mean")
    }

    // ---- multi-head attention primitives ----

    /// Per-head scoring: `t` is `n x d`, `v` is `H x d/H`; the result is
    /// `n x H` with `out[i,h] = Σ_j t[i, h·d/H + j] · v[h, j]`.
    pub fn head_scores(&mut self, t: Var, v: Var) -> Result<Var> {
        let (n, d) = self.dims(t, "head_scores")?;
        let (heads, dh) = self.dims(v, "head_scores")?;
        if heads * dh != d {
            return Err(self.mismatch("head_scores", t, v));
        }
        let (tt, tv) = (self.value(t).data(), self.value(v).data());
        let mut out = vec![0.0; n * heads];
        for i in 0..n {
            for h in 0..heads {
                let a = &tt[i * d + h * dh..i * d + (h + 1) * dh];
                let b = &tv[h * dh..(h + 1) * dh];
                out[i * heads + h] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        self.push(
            Tensor::matrix(n, heads, out)?,
            Op::HeadScores { t, v },
            &[t, v],
            "head_scores",
        )
    }

    /// Per-head weighted read: `w` is `n x H`, `values` is `n x d`; head `h`
    /// reads columns `h·d/H .. (h+1)·d/H` with weights `w[:, h]`. Returns a
    /// `1 x d` row of concatenated head contexts.
    pub fn head_read(&mut self, w: Var, values: Var) -> Result<Var> {
        let (n, heads) = self.dims(w, "head_read")?;
        let (n2, d) = self.dims(values, "head_read")?;
        if n != n2 || d % heads != 0 {
            return Err(self.mismatch("head_read", w, values));
        }
        let dh = d / heads;
        let (tw, tv) = (self.value(w).data(), self.value(values).data());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for h in 0..heads {
                let wi = tw[i * heads + h];
                for j in 0..dh {
                    out[h * dh + j] += wi * tv[i * d + h * dh + j];
                }
            }
        }
        self.push(Tensor::row(out)?, Op::HeadRead { w, values }, &[w, values], "head_read")
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(TensorError::Usage("backward on an inference graph".into()));
        }
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(root_value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.propagate(i, &gy, &mut grads);
            grads[i] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g).expect("gradient shape matches its node"),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, gy: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[i].value;
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).cols();
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_bt(gy.data(), val(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if rg(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_at(val(*a).data(), gy.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).rows();
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul(gy.data(), val(*b).data(), &mut da, m, n, k);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if rg(*b) {
                    let mut db = vec![0.0; n * k];
                    kernels::matmul_at(gy.data(), val(*a).data(), &mut db, m, n, k);
                    self.accumulate(grads, *b, Tensor::matrix(n, k, db).unwrap());
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                if rg(*b) {
                    self.accumulate(grads, *b, reduce_to(gy, val(*b)));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gy.clone());
                if rg(*b) {
                    self.accumulate(grads, *b, reduce_to(&gy.map(|g| -g), val(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let nb = tb.numel();
                if rg(*a) {
                    let d = gy
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, g)| g * tb.data()[j % nb])
                        .collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d).unwrap());
                }
                if rg(*b) {
                    let d = gy.data().iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                    let full = Tensor::new(ta.shape().to_vec(), d).unwrap();
                    self.accumulate(grads, *b, reduce_to(&full, tb));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, gy.map(|g| g * f)),
            Op::AddScalar(a) => self.accumulate(grads, *a, gy.clone()),
            Op::Sigmoid(a) => self.accumulate(grads, *a, zip_map(gy, y, |g, s| g * s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(gy, y, |g, t| g * (1.0 - t * t))),
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(gy, y, |g, e| g * e)),
            Op::Log(a) => self.accumulate(grads, *a, zip_map(gy, val(*a), |g, x| g / x)),
            Op::Softmax(x, axis) => {
                let (r, c) = y.dims2();
                let mut dx = vec![0.0; r * c];
                for_lanes(r, c, *axis, |idx| {
                    let dot: f64 = idx.clone().map(|k| gy.data()[k] * y.data()[k]).sum();
                    for k in idx {
                        dx[k] = y.data()[k] * (gy.data()[k] - dot);
                    }
                });
                self.accumulate(grads, *x, Tensor::matrix(r, c, dx).unwrap());
            }
            Op::LogSoftmax(x, axis) => {
                let (r, c) = y.dims2();
                let mut dx = vec![0.0; r * c];
                for_lanes(r, c, *axis, |idx| {
                    let total: f64 = idx.clone().map(|k| gy.data()[k]).sum();
                    for k in idx {
                        dx[k] = gy.data()[k] - y.data()[k].exp() * total;
                    }
                });
                self.accumulate(grads, *x, Tensor::matrix(r, c, dx).unwrap());
            }
            Op::ConcatCols(parts) => {
                let (r, total) = gy.dims2();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if rg(*p) {
                        let mut d = Vec::with_capacity(r * w);
                        for row in 0..r {
                            d.extend_from_slice(&gy.data()[row * total + offset..row * total + offset + w]);
                        }
                        self.accumulate(grads, *p, Tensor::matrix(r, w, d).unwrap());
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let c = gy.cols();
                let mut offset = 0;
                for p in parts {
                    let pr = val(*p).rows();
                    if rg(*p) {
                        let d = gy.data()[offset * c..(offset + pr) * c].to_vec();
                        self.accumulate(grads, *p, Tensor::matrix(pr, c, d).unwrap());
                    }
                    offset += pr;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(*x).dims2();
                let w = gy.cols();
                let mut d = vec![0.0; r * c];
                for row in 0..r {
                    d[row * c + start..row * c + start + w].copy_from_slice(gy.row_slice(row));
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::SliceRows { x, start } => {
                let (r, c) = val(*x).dims2();
                let mut d = vec![0.0; r * c];
                d[start * c..start * c + gy.numel()].copy_from_slice(gy.data());
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::GatherRows { table, ids } => {
                let (r, c) = val(*table).dims2();
                let mut d = vec![0.0; r * c];
                for (k, &id) in ids.iter().enumerate() {
                    for (dst, g) in d[id * c..(id + 1) * c].iter_mut().zip(gy.row_slice(k)) {
                        *dst += g;
                    }
                }
                self.accumulate(grads, *table, Tensor::matrix(r, c, d).unwrap());
            }
            Op::ReverseRows(x) => {
                let (r, c) = gy.dims2();
                let mut d = Vec::with_capacity(r * c);
                for row in (0..r).rev() {
                    d.extend_from_slice(gy.row_slice(row));
                }
                self.accumulate(grads, *x, Tensor::matrix(r, c, d).unwrap());
            }
            Op::Sum(x) => {
                let t = Tensor::full(val(*x).shape(), gy.item());
                self.accumulate(grads, *x, t);
            }
            Op::Mean(x) => {
                let n = val(*x).numel() as f64;
                let t = Tensor::full(val(*x).shape(), gy.item() / n);
                self.accumulate(grads, *x, t);
            }
            Op::HeadScores { t, v } => {
                let (tt, tv) = (val(*t), val(*v));
                let (n, d) = tt.dims2();
                let (heads, dh) = tv.dims2();
                if rg(*t) {
                    let mut dt = vec![0.0; n * d];
                    for i in 0..n {
                        for h in 0..heads {
                            let g = gy.data()[i * heads + h];
                            for j in 0..dh {
                                dt[i * d + h * dh + j] = g * tv.data()[h * dh + j];
                            }
                        }
                    }
                    self.accumulate(grads, *t, Tensor::matrix(n, d, dt).unwrap());
                }
                if rg(*v) {
                    let mut dv = vec![0.0; heads * dh];
                    for i in 0..n {
                        for h in 0..heads {
                            let g = gy.data()[i * heads + h];
                            for j in 0..dh {
                                dv[h * dh + j] += g * tt.data()[i * d + h * dh + j];
                            }
                        }
                    }
                    self.accumulate(grads, *v, Tensor::matrix(heads, dh, dv).unwrap());
                }
            }
            Op::HeadRead { w, values } => {
                let (tw, tv) = (val(*w), val(*values));
                let (n, heads) = tw.dims2();
                let d = tv.cols();
                let dh = d / heads;
                if rg(*w) {
                    let mut dw = vec![0.0; n * heads];
                    for i in 0..n {
                        for h in 0..heads {
                            dw[i * heads + h] = (0..dh)
                                .map(|j| gy.data()[h * dh + j] * tv.data()[i * d + h * dh + j])
                                .sum();
                        }
                    }
                    self.accumulate(grads, *w, Tensor::matrix(n, heads, dw).unwrap());
                }
                if rg(*values) {
                    let mut dv = vec![0.0; n * d];
                    for i in 0..n {
                        for h in 0..heads {
                            let wi = tw.data()[i * heads + h];
                            for j in 0..dh {
                                dv[i * d + h * dh + j] = wi * gy.data()[h * dh + j];
                            }
                        }
                    }
                    self.accumulate(grads, *values, Tensor::matrix(n, d, dv).unwrap());
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}

/// Calls `f` once per lane with the flat indices of that lane.
fn for_lanes(r: usize, c: usize, axis: Axis, mut f: impl FnMut(std::iter::StepBy<std::ops::Range<usize>>)) {
    match axis {
        Axis::Rows => {
            for col in 0..c {
                f((col..r * c).step_by(c));
            }
        }
        Axis::Cols => {
            for row in 0..r {
                f((row * c..(row + 1) * c).step_by(1));
            }
        }
    }
}
