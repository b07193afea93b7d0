//! Crate-wide error type.
//!
//! Everything that can fail at a module boundary returns [`Result`]. Internal
//! invariant violations (shape mismatches inside a forward pass, indexing
//! bugs) panic instead — they indicate programmer error, not bad input.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiscoganError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported wav format in {path}: {detail}")]
    UnsupportedWav { path: PathBuf, detail: String },

    #[error("sample would clip on write: {value} at index {index}")]
    Clipping { value: f64, index: usize },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DiscoganError>;

impl DiscoganError {
    /// Shorthand for precondition violations on public entry points.
    pub fn invalid(msg: impl Into<String>) -> Self {
        DiscoganError::InvalidInput(msg.into())
    }
}
