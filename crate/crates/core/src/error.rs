use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by model construction, parsing and experiment I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel spec: {0}")]
    InvalidChannel(String),

    #[error("contender count {0} is below 1")]
    ContenderDomain(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("undefined: {0}")]
    Undefined(&'static str),

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
