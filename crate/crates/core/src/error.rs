use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix block, label or manifest entry does not match the feature schema.
    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Factorization failure or a non-finite value where a finite one is required.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("solver did not converge: {0}")]
    Solver(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
