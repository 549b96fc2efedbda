use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit. Each variant names the module-level failure
/// class so front ends can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate row {row}: zero norm")]
    DegenerateRow { row: usize },

    #[error("index error: {0}")]
    Index(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("normalization error: row {row} has norm {norm}")]
    Normalization { row: usize, norm: f64 },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("format error in prompt template {0:?}: expected exactly one {{}} placeholder")]
    Template(String),

    #[error("spec error: {0}")]
    Spec(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
