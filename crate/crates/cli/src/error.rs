use thiserror::Error;

/// Failures of a CLI command, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation: missing inputs, locked run, conflicting state.
    #[error("{0}")]
    Usage(String),

    /// A check ran and failed.
    #[error("{0}")]
    Check(String),

    #[error(transparent)]
    Core(#[from] judgerl::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Check(_) => EXIT_CHECK,
            CliError::Core(judgerl::Error::Numerical { .. }) => EXIT_DIVERGENCE,
            CliError::Core(judgerl::Error::Config(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_CHECK,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
