use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("duplicate entry at gene {gene}, cell {cell}")]
    DuplicateEntry { gene: usize, cell: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Filtering removed every cell or every gene.
    #[error("filtering removed all {0}")]
    EmptyAfterFilter(&'static str),

    /// Input is valid but the requested estimate is undefined for it.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("non-finite log-likelihood at iteration {iteration}, cell {cell}")]
    NonFinite { iteration: usize, cell: usize },

    #[error("all {0} restarts failed; last error: {1}")]
    AllRestartsFailed(usize, Box<Error>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
