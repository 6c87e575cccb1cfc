use thiserror::Error;

/// Failure of a CLI command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, bad flag value or an input file of the wrong kind.
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<fedsim_core::Error> for CliError {
    fn from(e: fedsim_core::Error) -> Self {
        match e {
            fedsim_core::Error::Config(_) | fedsim_core::Error::Shard { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
