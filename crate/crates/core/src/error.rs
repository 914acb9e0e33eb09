use std::path::PathBuf;

/// Errors produced across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid ray: {0}")]
    InvalidRay(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("invalid channel layout: {0}")]
    Layout(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid depth: {0}")]
    InvalidDepth(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.into(),
        }
    }
}
