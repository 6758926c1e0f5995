use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or layer parameters that cannot be combined.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller-supplied argument is outside its domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The weight manifest is malformed or does not describe VGG-19.
    #[error("manifest error in {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    /// A weight blob's size or declared shape is wrong.
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A weight blob's digest does not match the manifest.
    #[error("integrity error in {path}: expected sha256 {expected}, found {actual}")]
    Integrity {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// Malformed word-count CSV; `line` is 1-based and counts the header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Not enough variation in the data to fit a law.
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
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
