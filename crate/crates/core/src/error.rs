use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Non-finite value encountered during training or a gradient check.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: unsupported image format: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("manifest {path}: row {row}: unknown label {label:?}")]
    UnknownLabel {
        path: PathBuf,
        row: usize,
        label: String,
    },

    #[error("manifest {path}: row {row}: duplicate path {entry:?}")]
    DuplicatePath {
        path: PathBuf,
        row: usize,
        entry: String,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("snapshot: bad magic bytes")]
    BadMagic,

    #[error("snapshot: unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("snapshot: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("snapshot: truncated or malformed payload: {0}")]
    Truncated(String),

    #[error("snapshot: stored element width {stored} bytes, build expects {expected}")]
    WidthMismatch { stored: u8, expected: u8 },

    #[error("snapshot: tensor {name:?} does not match architecture: {reason}")]
    ShapeMismatch { name: String, reason: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! dim_err {
    ($($arg:tt)*) => { $crate::error::Error::Dimension(format!($($arg)*)) };
}

macro_rules! arg_err {
    ($($arg:tt)*) => { $crate::error::Error::Argument(format!($($arg)*)) };
}

pub(crate) use arg_err;
pub(crate) use dim_err;
