use std::path::PathBuf;

use thiserror::Error;
use tritrans_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error("{path}: malformed header at byte {offset}: {reason}")]
    MalformedHeader { path: PathBuf, offset: usize, reason: String },

    #[error("{path}: image extents overflow at byte {offset}")]
    ExtentOverflow { path: PathBuf, offset: usize },

    #[error("{path}: truncated payload at byte {offset} (expected {expected} bytes)")]
    TruncatedPayload { path: PathBuf, offset: usize, expected: usize },

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("manifest {path} line {line}: {reason}")]
    Manifest { path: PathBuf, line: usize, reason: String },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config { key: key.to_string(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 usage/config, 2 data or shape, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
