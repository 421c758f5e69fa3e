use preflab_core::Error as CoreError;

/// Companion-crate error with a stable exit-code mapping:
/// 0 success, 1 check failure or IO, 2 configuration, 3 numerical abort.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numeric(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("format error in {path} line {line}: {message}")]
    Format { path: String, line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Format { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::CheckFailed(_) | CliError::Io(_) => 1,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }
}

/// Setup-phase core errors are configuration problems; non-finite values
/// are numerical aborts.
pub fn from_core(err: CoreError) -> CliError {
    match err {
        CoreError::NonFinite(_)
        | CoreError::NonFiniteLoss { .. }
        | CoreError::TrainAbort { .. } => CliError::Numeric(err.to_string()),
        other => CliError::Config(other.to_string()),
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
