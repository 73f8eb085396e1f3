//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by model construction, training, inference, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad hyperparameters, inconsistent specs).
    #[error("configuration error: {0}")]
    Config(String),

    /// Tensor or layer shape mismatch.
    #[error("shape error: {0}")]
    Shape(String),

    /// API misuse (calls out of order, missing inputs, bad arguments).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed or exhausted data during loading or streaming.
    #[error("data error: {0}")]
    Data(String),

    /// Parse failure in a structured-text file, with 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training aborted; identifies where the failure occurred.
    #[error("training error at epoch {epoch}, batch {batch}, exit {exit}: {message}")]
    Train {
        epoch: usize,
        batch: usize,
        exit: usize,
        message: String,
    },

    /// Non-finite gradient detected in a named parameter block.
    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    /// Serialization or deserialization failure.
    #[error("serialization error: {0}")]
    Serialize(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialize(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
