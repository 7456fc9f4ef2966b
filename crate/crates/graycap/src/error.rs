//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing frame: {0}")]
    MissingFrame(String),

    #[error("invalid stream: {0}")]
    InvalidStream(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("invalid rank: {0}")]
    InvalidRank(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("llm error: {0}")]
    Llm(#[from] crate::llm::LlmError),

    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl Error {
    pub(crate) fn stage(stage: &str, err: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            message: err.to_string(),
        }
    }
}
