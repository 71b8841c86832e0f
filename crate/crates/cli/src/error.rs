use holdgraph::Error as CoreError;

/// Failures grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input files, configuration, or workspace state (exit 2).
    #[error("{0}")]
    Input(String),
    /// A query named something that does not exist (exit 3).
    #[error("{0}")]
    Query(String),
    /// Anything else (exit 1).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Input(_) => 2,
            CliError::Query(_) => 3,
        }
    }

    pub fn internal(context: impl std::fmt::Display, e: impl std::fmt::Display) -> Self {
        CliError::Internal(format!("{context}: {e}"))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io(_)
            | CoreError::Contract(_)
            | CoreError::DegenerateVector(_)
            | CoreError::UndefinedCorrelation(_) => CliError::Internal(msg),
            CoreError::UnknownNode(_) => CliError::Query(msg),
            _ => CliError::Input(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
