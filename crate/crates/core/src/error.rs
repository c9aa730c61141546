use thiserror::Error;

/// Errors raised across the crate.
///
/// Each variant maps onto one failure class of the command-line tool, see
/// [`LtvError::exit_code`].
#[derive(Debug, Error)]
pub enum LtvError {
    /// Inconsistent shapes, invalid hyperparameters, broken ablation ladders.
    #[error("configuration error: {0}")]
    Config(String),
    /// Data that violates a domain rule (negative label, empty split, ...).
    #[error("input error: {0}")]
    Input(String),
    /// CSV header that cannot be mapped onto the column schema.
    #[error("schema error: {0}")]
    Schema(String),
    /// A loss or activation became NaN/Inf.
    #[error("non-finite value in {component}: {detail}")]
    NonFinite { component: String, detail: String },
    /// Checkpoint and data (or checkpoint and code) disagree.
    #[error("artifact mismatch: {0}")]
    Artifact(String),
    /// Gradient verification failed.
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl LtvError {
    pub fn config(msg: impl Into<String>) -> Self {
        LtvError::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        LtvError::Input(msg.into())
    }

    pub fn non_finite(component: impl Into<String>, detail: impl Into<String>) -> Self {
        LtvError::NonFinite {
            component: component.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code: 2 input/config, 3 numeric abort, 4 artifact mismatch,
    /// 5 verification failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LtvError::Config(_)
            | LtvError::Input(_)
            | LtvError::Schema(_)
            | LtvError::Io(_)
            | LtvError::Json(_)
            | LtvError::Csv(_) => 2,
            LtvError::NonFinite { .. } => 3,
            LtvError::Artifact(_) => 4,
            LtvError::Verification(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, LtvError>;
