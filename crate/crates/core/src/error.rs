use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the transport toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure after {iterations} pivots: {reason}")]
    SolverFailure { iterations: usize, reason: String },

    /// Non-finite or zero scaling encountered by the linear-domain iteration.
    /// Retrying in the log domain usually resolves it.
    #[error("numerical failure at iteration {iteration}: {reason}")]
    NumericalFailure { iteration: usize, reason: String },

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("inconsistent {tensor}: {reason}")]
    Consistency { tensor: String, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// A cached forward pass no longer matches the parameters it was taken with.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("barycenter descent diverged at step {step}; try a smaller step size")]
    Diverged { step: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
