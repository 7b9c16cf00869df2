use std::io;

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at iteration {iteration} (batch {batch})")]
    NonFiniteLoss { iteration: usize, batch: usize },

    #[error("frozen parameters of `{0}` changed during fine-tuning")]
    FrozenParameterChanged(String),

    #[error("corrupt bitstream: {0}")]
    CorruptStream(String),

    #[error("hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("rate is no longer fixed: {0}")]
    RateNotFixed(String),

    #[error("degenerate curve: {0}")]
    DegenerateCurve(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
