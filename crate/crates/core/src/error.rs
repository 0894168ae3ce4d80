use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("relations are undefined on empty or universal sets")]
    DegenerateSet,
    #[error("domain too small: {0}")]
    DomainTooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("inconsistent facts: {0}")]
    Inconsistent(String),
    #[error("generation exhausted: {0}")]
    GenerationExhausted(String),
    #[error("insufficient pairs: {0}")]
    InsufficientPairs(String),
    #[error("unstable labels: {0}")]
    UnstableLabels(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
