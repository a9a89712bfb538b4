use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the nowcasting stack.
#[derive(Debug, Error)]
pub enum NowcastError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dataset {path}: {field}: {message}")]
    Dataset {
        path: PathBuf,
        field: String,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("insufficient data: {found} exceedances, need at least {required}")]
    InsufficientData { found: usize, required: usize },

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, NowcastError>;

pub(crate) fn shape_err(msg: impl Into<String>) -> NowcastError {
    NowcastError::Shape(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> NowcastError {
    NowcastError::InvalidInput(msg.into())
}
