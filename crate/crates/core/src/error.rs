use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("tensor not found: `{0}`")]
    TensorNotFound(String),

    #[error("container format error in `{tensor}`: {reason}")]
    Format { tensor: String, reason: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("out of range: {0}")]
    OutOfRange(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(tensor: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            tensor: tensor.into(),
            reason: reason.into(),
        }
    }
}
