use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("window [{offset}, {offset}+{len}) is out of bounds for trace '{trace_id}' of length {trace_len}")]
    Bounds {
        trace_id: String,
        offset: usize,
        len: usize,
        trace_len: usize,
    },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {layer}: expected {expected:?}, got {actual:?}")]
    Shape {
        layer: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("{path}: expected format '{expected}', found '{found}'")]
    FormatVersion {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}: content hash {actual} does not match recorded {recorded}")]
    HashMismatch {
        path: PathBuf,
        recorded: String,
        actual: String,
    },

    #[error("missing input file {0}")]
    MissingFile(PathBuf),

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
