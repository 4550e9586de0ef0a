//! Error taxonomy for the whole pipeline. The CLI maps `Io` to exit code 2
//! and everything else to exit code 1.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("checksum mismatch: {0}")]
    Checksum(String),

    #[error("non-finite loss at step {step} (slices {slices})")]
    NonFiniteLoss { step: usize, slices: String },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
