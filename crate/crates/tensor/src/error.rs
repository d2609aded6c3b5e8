use thiserror::Error;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),

    #[error("shape {shape:?} needs {} elements, got {len}", .shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: index {index} out of range for extent {extent}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },

    #[error("{op}: input outside the function domain")]
    Domain { op: &'static str },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("usage: {0}")]
    Usage(String),
}
