//! Bidirectional neural machine translation in which a right-to-left
//! decoder's states form a memory that the left-to-right decoder
//! addresses, reads and rewrites at every step.

pub mod config;
pub mod decode;
pub mod error;
pub mod eval;
pub mod nn;
pub mod tasks;
pub mod text;
pub mod train;

pub use config::RunConfig;
pub use error::{Error, Result};
