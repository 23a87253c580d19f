//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors produced by tensor operations, model construction, training and IO.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: empty input")]
    Empty { op: &'static str },

    #[error("invalid configuration: {field}: {message}")]
    Config { field: String, message: String },

    #[error("non-finite value produced by `{op}`")]
    NonFiniteOp { op: &'static str },

    #[error("non-finite loss at step {step} (lr = {lr:e}); offending tensor: {tensor}")]
    NonFiniteLoss { step: usize, lr: f64, tensor: String },

    #[error("matrix is not symmetric (max residue {residue:e})")]
    NotSymmetric { residue: f64 },

    #[error("bad tensor file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
