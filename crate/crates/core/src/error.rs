use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector has no angle")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("labels are required for this operation")]
    MissingLabels,
    #[error("class {0} has no members")]
    EmptyClass(crate::transform::Label),
    #[error("no retained extreme points")]
    NoRetainedPoints,
    #[error("empty candidate class")]
    EmptyCandidateClass,
    #[error("malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
