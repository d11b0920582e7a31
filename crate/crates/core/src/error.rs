use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An argument lies outside the domain the operation is defined on.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-side precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Gradients and parameters do not line up.
    #[error("gradient accounting error: {0}")]
    Accounting(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("tag {tag:?} at line {line} is not in the IOB scheme")]
    Scheme { line: usize, tag: String },

    /// Configuration or artifact consistency failure.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
