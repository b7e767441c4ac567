use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: record {record}: {message}")]
    Parse {
        file: String,
        record: usize,
        message: String,
    },

    #[error("empty gaussian set")]
    EmptyGaussians,

    #[error("no visible gaussians")]
    NoVisibleGaussians,

    #[error("no floater coverage")]
    NoFloaterCoverage,

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image too small: {width}x{height}, need at least {min} on each side")]
    ImageTooSmall { width: usize, height: usize, min: usize },

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training aborted at iteration {iteration}: {reason}")]
    Aborted { iteration: u32, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(file: impl Into<String>, record: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            record,
            message: message.into(),
        }
    }

    pub(crate) fn config(field: &str, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
