use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape error at layer `{layer}`: {reason}")]
    Shape { layer: String, reason: String },

    #[error("weight error for tensor `{tensor}`: {reason}")]
    Weight { tensor: String, reason: String },

    #[error("load error at byte offset {offset}: {reason}")]
    Load { offset: usize, reason: String },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("no valid pixels to evaluate")]
    EmptyEvaluation,

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
