//! Error type shared across the network/training crate.

/// Errors produced by model construction, tensor ops, training and
/// checkpointing. Core-pipeline and tensor-backend errors are wrapped so
/// every fallible path in this crate speaks one type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Re-raised error from the core geometry/render/loss crate.
    #[error(transparent)]
    Core(#[from] hyface_core::Error),

    /// Tensor backend failure (shape/dtype mismatch, unsupported op, ...).
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    /// A model or training setup was configured inconsistently (dimension
    /// mismatch, duplicate parameter name, bad channel counts, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An input value violated a documented precondition (wrong resolution,
    /// empty dataset, non-finite parameter, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A checkpoint does not match the requested model architecture or is
    /// otherwise unusable.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// An operation was invoked from the wrong state (e.g. stage-2 training
    /// without a stage-1 checkpoint).
    #[error("state error: {0}")]
    State(String),
}

pub type Result<T> = std::result::Result<T, Error>;
