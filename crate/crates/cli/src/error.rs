use thiserror::Error;

/// Failures of a command, each tied to a stable exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("acceptance failure: {0}")]
    Acceptance(String),

    #[error("invalid config at {path}: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("numerical failure at step {step}: {message}")]
    Numerical { step: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Acceptance(_) => 1,
            CliError::Config { .. } | CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }
}

impl From<eks_core::Error> for CliError {
    fn from(e: eks_core::Error) -> Self {
        match e {
            eks_core::Error::AtStep { step, source } => CliError::Numerical {
                step,
                message: source.to_string(),
            },
            e => CliError::Numerical {
                step: 0,
                message: e.to_string(),
            },
        }
    }
}
