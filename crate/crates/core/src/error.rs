use thiserror::Error;

/// Errors produced by the data pipeline, the model trainers, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("imputation error: feature '{feature}' {reason}")]
    Imputation { feature: String, reason: String },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("regression subset is empty: no targets above the threshold")]
    EmptySubset,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("labels must be binary 0/1, found {0}")]
    NonBinaryLabels(f64),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("trial failed: {0}")]
    Trial(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
