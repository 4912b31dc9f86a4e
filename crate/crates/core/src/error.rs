use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("annotation row {row}: {message}")]
    Annotation { row: usize, message: String },

    #[error("multichannel unsupported ({channels} channels in {path})")]
    Multichannel { path: PathBuf, channels: u16 },

    #[error("unsupported encoding in {path}: {detail}")]
    UnsupportedEncoding { path: PathBuf, detail: String },

    #[error("weight file {path}: {message}")]
    WeightFile { path: PathBuf, message: String },

    #[error("weight file {path}: format version {found} is not supported (expected {expected})")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! ensure {
    ($cond:expr, $variant:ident, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::$variant(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
