use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: String },

    #[error("{path}: truncated payload, expected {expected} values but found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: header dimensions overflow ({detail})")]
    DimensionOverflow { path: PathBuf, detail: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("eigensolver did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("trajectory diverged at step {step} (loss {loss:e})")]
    Divergence { step: usize, loss: f64 },

    #[error("power-law fit failed: {0}")]
    Fit(String),

    #[error("extrapolation infeasible: {0}")]
    Extrapolation(String),

    #[error("resource limit: {0}")]
    Resource(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error came from malformed input or a bad invocation
    /// rather than from the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::Usage(_)
                | Error::Domain(_)
                | Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::DimensionOverflow { .. }
                | Error::Parse { .. }
                | Error::Resource(_)
        )
    }
}
