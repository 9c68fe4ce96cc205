use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Numerical(_) => 4,
        })
    }
}

impl From<oneshot_dpd::Error> for CliError {
    fn from(e: oneshot_dpd::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
