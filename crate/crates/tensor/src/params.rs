use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor and its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> &Tensor {
        &self.grad
    }
}

/// Ordered collection of named parameters. Registration order is the
/// canonical order used by optimizers and checkpoints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Usage(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value, grad });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Simultaneous mutable access to each value and its gradient.
    pub fn values_and_grads_mut(&mut self) -> impl Iterator<Item = (&mut Tensor, &Tensor)> {
        self.params.iter_mut().map(|p| (&mut p.value, &p.grad))
    }

    pub fn grads_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.grad)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Adds the gradients of every parameter registered on `graph`.
    pub fn accumulate_grads(&mut self, graph: &Graph, grads: &Gradients) {
        for &(id, var) in graph.params() {
            if let Some(g) = grads.get(var) {
                self.params[id.0]
                    .grad
                    .add_assign(g)
                    .expect("gradient has its parameter's shape");
            }
        }
    }

    /// Global L2 norm over all gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params.iter().map(|p| p.grad.sum_squares()).sum::<f64>().sqrt()
    }
}

/// Rescales `grads` so their joint L2 norm does not exceed `max_norm`.
///
/// Returns the factor applied (`1.0` when the norm is already within bounds).
pub fn clip_global_norm<'a>(grads: impl IntoIterator<Item = &'a mut Tensor>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let mut grads: Vec<&mut Tensor> = grads.into_iter().collect();
    let norm = grads.iter().map(|g| g.sum_squares()).sum::<f64>().sqrt();
    if norm <= max_norm {
        return 1.0;
    }
    let scale = max_norm / norm;
    for g in grads.iter_mut() {
        g.scale_in_place(scale);
    }
    scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_halves_norm_ten() {
        let mut a = Tensor::row(vec![6.0, 0.0]).unwrap();
        let mut b = Tensor::row(vec![0.0, 8.0]).unwrap();
        let s = clip_global_norm([&mut a, &mut b], 5.0);
        assert_eq!(s, 0.5);
        assert_eq!(a.data(), &[3.0, 0.0]);
        assert_eq!(b.data(), &[0.0, 4.0]);
    }

    #[test]
    fn clip_leaves_small_and_zero_grads() {
        let mut a = Tensor::row(vec![3.0, 0.0]).unwrap();
        assert_eq!(clip_global_norm([&mut a], 5.0), 1.0);
        assert_eq!(a.data(), &[3.0, 0.0]);
        let mut z = Tensor::zeros(&[2, 2]);
        assert_eq!(clip_global_norm([&mut z], 5.0), 1.0);
        assert_eq!(z.sum_squares(), 0.0);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(&[1, 1])).unwrap();
        assert!(s.add("w", Tensor::zeros(&[1, 1])).is_err());
    }

    #[test]
    fn param_registered_once_per_graph() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(2.0)).unwrap();
        let mut g = Graph::new();
        let a = g.param(&s, id);
        let b = g.param(&s, id);
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        s.accumulate_grads(&g, &grads);
        assert_eq!(s.grad(id).item(), 4.0);
    }
}
