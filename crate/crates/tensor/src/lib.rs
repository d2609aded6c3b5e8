//! Dense `f64` tensors and a define-by-run reverse-mode autodiff tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! Calling [`Graph::backward`] on a scalar replays the record in reverse
//! and returns the accumulated [`Gradients`]. Trainable parameters live
//! in a [`ParamStore`] outside any graph; each forward pass registers the
//! ones it touches with [`Graph::param`].
//!
//! ```
//! use dimnmt_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.variable(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```
//!
//! # Broadcasting
//!
//! Binary elementwise ops (`add`, `sub`, `mul`) accept a right-hand side
//! that either matches the left shape exactly, is a `1 x c` row repeated
//! over every row of an `r x c` left side, or is a `1 x 1` scalar. No
//! other broadcast is performed.

mod error;
mod graph;
mod params;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Axis, Gradients, Graph, Var};
pub use params::{clip_global_norm, Param, ParamId, ParamStore};
pub use tensor::Tensor;
