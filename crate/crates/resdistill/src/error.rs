//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward target is not a scalar (numel {0})")]
    NotScalar(usize),
    #[error("tensor is detached from any live graph")]
    Detached,
    #[error("tensors belong to different graphs")]
    GraphMismatch,
    #[error("wrt tensor is not an ancestor of the target")]
    NotAncestor,
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("NaN gradient encountered at step {0}")]
    NanGradient(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;
