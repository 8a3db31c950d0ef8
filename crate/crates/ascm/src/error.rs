//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV: {0}")]
    MalformedWav(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedWav(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("linear algebra error: {0}")]
    Linalg(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate i-vector")]
    DegenerateIvector,

    #[error("score error: {0}")]
    Score(String),

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
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
