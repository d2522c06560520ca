use std::fmt;

use mln_core::Error as CoreError;

/// Failure of a command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl fmt::Display) -> Self {
        CliError::Config {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// Wraps a library error raised while acting on the config block at
    /// `path`; precondition failures become config errors there.
    pub fn at(path: &str) -> impl Fn(CoreError) -> CliError + '_ {
        move |e| match e {
            CoreError::Usage(msg) => CliError::config(path, msg),
            other => other.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Usage(msg) => CliError::Config {
                path: "(input)".into(),
                message: msg,
            },
            CoreError::NonFinite { .. }
            | CoreError::Diverged { .. }
            | CoreError::EmptyClassRow { .. } => CliError::Numeric(e.to_string()),
            CoreError::BadMagic { .. }
            | CoreError::Truncated { .. }
            | CoreError::CountMismatch { .. }
            | CoreError::Format { .. }
            | CoreError::Io(_)
            | CoreError::Json(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
