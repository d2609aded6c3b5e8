use dimnmt_tensor::{ParamStore, Tensor};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
        }
    }
}

/// Adam moments, one pair per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value().shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected update from the gradients held in `params`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64, cfg: &AdamConfig) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powf(self.t as f64);
        let c2 = 1.0 - cfg.beta2.powf(self.t as f64);
        for (i, (value, grad)) in params.values_and_grads_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
