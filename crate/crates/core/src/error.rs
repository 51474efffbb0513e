use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or mismatched dimensions.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order or with inconsistent arguments.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("data error: {0}")]
    Data(String),

    /// A fixed-point value or homomorphic accumulation left the message space.
    #[error("overflow: {0}")]
    Overflow(String),

    /// Runs being compared were produced under incompatible settings.
    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error on {path}: {source}")]
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

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
