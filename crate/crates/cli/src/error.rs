use bpd_core::BpdError;
use thiserror::Error;

/// CLI failures, split by exit code: configuration problems exit with 2,
/// everything that goes wrong after validation exits with 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{0}")]
    Run(BpdError),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<BpdError> for CliError {
    fn from(e: BpdError) -> Self {
        match e {
            BpdError::InvalidConfig { field, reason } => CliError::Config(format!("{field}: {reason}")),
            other => CliError::Run(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(BpdError::Json(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}
