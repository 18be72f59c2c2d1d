use lyapsens_sim::SimError;
use thiserror::Error;

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("config error: {0}")]
    Schema(String),
    #[error("refused: {0}")]
    Refusal(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("truncated: {0}")]
    Truncation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Refusal(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Truncation(_) => 5,
        }
    }
}

impl From<lyapsens_core::Error> for CliError {
    fn from(e: lyapsens_core::Error) -> Self {
        use lyapsens_core::Error as E;
        if e.is_refusal() {
            CliError::Refusal(e.to_string())
        } else if matches!(e, E::Numerical(_)) {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Schema(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Truncation { .. } => CliError::Truncation(e.to_string()),
            SimError::InvalidInput(m) => CliError::Schema(m),
            SimError::Refusal(m) => CliError::Refusal(m),
            SimError::Core(c) => c.into(),
        }
    }
}
