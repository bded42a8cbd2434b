use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cannot cosine-normalize {what}: row {row} has zero norm")]
    ZeroNorm { what: String, row: usize },

    #[error("provider missing: {0}")]
    ProviderMissing(String),

    #[error("fixture entry not found: {0}")]
    FixtureMissing(String),

    #[error("fixture archive: {0}")]
    Archive(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("empty evaluation: no class was seen")]
    EmptyEvaluation,

    #[error("duplicate class name after expansion: {0:?}")]
    DuplicateName(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
