use std::process::ExitCode;

use glycontrol::lmi::LmiError;

/// Failures mapped to distinct exit codes. Usage errors (code 2) are
/// reported by the argument parser before any of these can occur.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("synthesis infeasible: {0}")]
    Infeasible(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Verification(_) => 5,
        })
    }
}

impl From<LmiError> for CliError {
    fn from(e: LmiError) -> Self {
        match e {
            LmiError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
            LmiError::InvalidOption(_) | LmiError::Unsupported => CliError::Config(e.to_string()),
            other => CliError::Other(other.into()),
        }
    }
}
