use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("tape does not belong to the current parameters of this network")]
    StaleTape,

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: &'static str, reason: String },

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("cache holds no initialized rows")]
    EmptyCache,

    #[error("window epochs must increase: last stored {last}, pushed {pushed}")]
    EpochOrder { last: usize, pushed: usize },

    #[error("window holds {have} of {need} rows; use a standard pair during warmup")]
    WindowWarmup { have: usize, need: usize },

    #[error("distribution support is empty")]
    EmptySupport,

    #[error("no candidate neighbors remain after exclusion")]
    NoCandidates,

    #[error("shard map breach: {0}")]
    Partition(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("training collapsed at epoch {epoch}: {reason}")]
    Collapsed { epoch: usize, reason: String },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Config {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Shape {
            context,
            expected,
            actual,
        }
    }
}
