use std::path::PathBuf;

use dimnmt_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("incompatible artifact: {0}")]
    Version(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}; offending batch dumped to {}", .dump.display())]
    NonFiniteLoss { step: u64, dump: PathBuf },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Self::Format {
            what,
            detail: detail.into(),
        }
    }
}
