use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum BpdError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("soft value iteration did not converge: residual {residual:.3e} > tol {tol:.3e} after {iters} iterations")]
    NotConverged { residual: f64, tol: f64, iters: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        /// Training log up to the failure, as CSV.
        log_csv: String,
    },

    #[error("sequence predictor underfits: held-out cross-entropy {heldout_ce:.4} exceeds the uniform baseline {baseline:.4}")]
    Underfit { heldout_ce: f64, baseline: f64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BpdError {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        BpdError::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, BpdError>;
