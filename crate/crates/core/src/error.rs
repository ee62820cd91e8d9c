use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("spec hash mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("training diverged at step {step} (loss {loss})")]
    Divergence { step: u64, loss: f64 },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("access audit violation: {0}")]
    Audit(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
