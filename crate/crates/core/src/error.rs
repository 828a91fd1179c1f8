use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid item: {0}")]
    InvalidItem(String),

    #[error("index {index} out of range (bound {bound})")]
    IndexOutOfRange { index: usize, bound: usize },

    #[error("interaction history cancels out to a zero vector")]
    DegenerateHistory,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },

    #[error("degenerate catalog: {0}")]
    DegenerateCatalog(String),

    #[error("invalid slate: {0}")]
    InvalidSlate(String),

    #[error("social graph has no edges")]
    NoEdges,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input or configuration rather than a failure at
    /// run time. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidItem(_)
                | Error::IndexOutOfRange { .. }
                | Error::InvalidRequest(_)
                | Error::DegenerateCatalog(_)
                | Error::InvalidSlate(_)
                | Error::NoEdges
                | Error::Parse { .. }
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
