//! Crate-wide error type and process exit-code mapping.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, AmqfError>;

#[derive(Debug, thiserror::Error)]
pub enum AmqfError {
    /// Bad input data or arguments (shape mismatches, out-of-range values, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed record in a manifest or other line-oriented input.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Inconsistent or unusable configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric failure (NaN/divergence) during optimization or scoring.
    #[error("numeric error: {0}")]
    Numeric(String),

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
}

impl AmqfError {
    pub fn validation(msg: impl Into<String>) -> Self {
        AmqfError::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        AmqfError::Config(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        AmqfError::Numeric(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AmqfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 validation, 3 i/o, 4 numeric.
    pub fn exit_code(&self) -> u8 {
        match self {
            AmqfError::Validation(_) | AmqfError::Parse { .. } | AmqfError::Config(_) => 2,
            AmqfError::Io { .. } | AmqfError::Image { .. } => 3,
            AmqfError::Numeric(_) => 4,
        }
    }
}
