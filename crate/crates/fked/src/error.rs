use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

/// Command failure, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or malformed input, bad flags or configuration.
    #[error("{0}")]
    Input(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    /// Numerical or model-fitting failure.
    #[error(transparent)]
    Fit(#[from] fked_core::Error),

    /// A result violated an invariant the pipeline guarantees.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Self::Parse { path: path.into(), line, message: message.into() }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Parse { .. } | Self::Io { .. } => 2,
            Self::Fit(_) => 3,
            Self::Internal(_) => 4,
        }
    }
}

/// Re-labels a core error raised while validating input as an input error.
pub fn as_input(e: fked_core::Error) -> CliError {
    CliError::Input(e.to_string())
}
