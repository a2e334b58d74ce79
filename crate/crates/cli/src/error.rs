use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("gradient check failed: {0}")]
    Gradcheck(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("{0}")]
    Core(#[from] mnemonics::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 1 gradient-check breach, 2 invalid input, 3 numeric
    /// divergence, 4 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Gradcheck(_) => 1,
            CliError::MissingArtifact(_) => 4,
            CliError::Core(e) if e.is_numeric_failure() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
