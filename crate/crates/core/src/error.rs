use std::path::PathBuf;

use thiserror::Error;

/// Errors produced while building, solving or writing a space-time problem.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("invalid refinement of cell {id}: {reason}")]
    InvalidRefinement { id: usize, reason: String },

    /// The mesh violates a structural invariant (partition, overlap weights, ...).
    #[error("mesh integrity error: {0}")]
    MeshIntegrity(String),

    /// Vectors, indices or trees that should correspond do not.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("linear solver failure: {0}")]
    SolverFailure(String),

    /// Newton did not converge on the finest level of a slab.
    #[error("Newton failed to converge on slab {slab} at level {level} after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        slab: usize,
        level: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("failed to read field file {path}: {message}")]
    Field { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
