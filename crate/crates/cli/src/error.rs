use thiserror::Error;

/// Failure classes that map onto process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent configuration, missing files, unwritable outputs.
    #[error("{0}")]
    Config(String),
    /// The numerics gave up (factorization, conversion, divergence).
    #[error("{0}")]
    Numerical(String),
    /// A benchmark missed its threshold.
    #[error("{0}")]
    Threshold(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::Threshold(_) => 3,
        }
    }
}

impl From<gpmpc::Error> for CliError {
    fn from(e: gpmpc::Error) -> Self {
        use gpmpc::Error::*;
        match e {
            InputShape { .. } | Input(_) | Parse { .. } | Schema(_) | Io(_) | Json(_) => {
                CliError::Config(e.to_string())
            }
            Domain(_) | IllConditionedGram { .. } | NoPrincipalLog { .. } | IllPosed(_) | IntegrationBlowup { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
