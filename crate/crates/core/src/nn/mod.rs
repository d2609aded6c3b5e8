//! Encoder, attention, the dynamic interaction memory and the full
//! bidirectional model.

mod attention;
mod config;
mod dim;
mod encoder;
mod gru;
mod model;

pub use attention::{AdditiveAttention, Addressed, Keys};
pub use config::{DimMode, MemorySource, ModelConfig};
pub use dim::{Dim, DimGates, DimMemory};
pub use encoder::{Encoder, EncoderStates};
pub use gru::GruCell;
pub use model::{can_emit, Decoder, DecoderInput, Direction, Model, Run, SentenceForward, StepOutput};

use dimnmt_tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// One forward pass: a tape plus read access to the parameters it uses.
pub struct Ctx<'p> {
    pub graph: Graph,
    params: &'p ParamStore,
    dropout: Option<ChaCha8Rng>,
}

impl<'p> Ctx<'p> {
    /// Differentiable pass with dropout drawn from `rng`.
    pub fn train(params: &'p ParamStore, rng: ChaCha8Rng) -> Self {
        Self {
            graph: Graph::new(),
            params,
            dropout: Some(rng),
        }
    }

    /// Differentiable pass without dropout.
    pub fn deterministic(params: &'p ParamStore) -> Self {
        Self {
            graph: Graph::new(),
            params,
            dropout: None,
        }
    }

    /// Evaluation only: no dropout, nothing recorded for backward.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self {
            graph: Graph::inference(),
            params,
            dropout: None,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn is_training(&self) -> bool {
        self.dropout.is_some()
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.graph.param(self.params, id)
    }

    /// Inverted dropout; identity outside training.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.dropout.as_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - rate;
        let shape = self.graph.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = self.graph.constant(Tensor::new(shape, mask)?);
        Ok(self.graph.mul(x, mask)?)
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.graph.constant(Tensor::zeros(&[rows, cols]))
    }
}

/// Adds a parameter drawn uniformly from `[-range, range]`.
pub(crate) fn uniform_param(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    rows: usize,
    cols: usize,
    range: f64,
) -> Result<ParamId> {
    let data = (0..rows * cols)
        .map(|_| {
            if range > 0.0 {
                rng.gen_range(-range..=range)
            } else {
                0.0
            }
        })
        .collect();
    Ok(store.add(name, Tensor::matrix(rows, cols, data)?)?)
}
