//! Error type shared across the core pipeline.

use std::path::PathBuf;

/// Errors produced by model construction, rendering, losses, metrics and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A model or rig was configured inconsistently (dimension mismatch,
    /// invalid anchors, bad channel counts, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An input value violated a documented precondition (non-finite
    /// parameter, non-positive camera scale, shape mismatch, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// A text data file (landmarks, manifest, mask index list) failed to
    /// parse. Carries the offending file and 1-based line number.
    #[error("format error in {file}, line {line}: {msg}")]
    Format {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    /// Archive (rig/params/checkpoint) content does not match its manifest.
    #[error("archive error: {0}")]
    Archive(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png error on {path}: {msg}")]
    Png { path: PathBuf, msg: String },
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
