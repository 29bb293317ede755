//! Harness error type with process exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training divergence: {0}")]
    Divergence(String),

    #[error("{0}")]
    Core(dbea_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("usage error: {0}")]
    Usage(String),
}

impl From<dbea_core::Error> for CliError {
    fn from(e: dbea_core::Error) -> Self {
        match e {
            dbea_core::Error::Config(m) => CliError::Config(m),
            dbea_core::Error::Data(m) => CliError::Data(m),
            dbea_core::Error::Divergence(m) => CliError::Divergence(m),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
    /// divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Core(dbea_core::Error::Divergence(_)) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
