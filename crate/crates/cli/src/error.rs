use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or values.
    #[error("usage: {0}")]
    Usage(String),
    /// A required input of the command does not exist.
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: table2image::Error,
    },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Precondition(_) => "precondition",
            CliError::Core { .. } => "runtime",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Core { .. } => 1,
        }
    }

    pub fn record(&self, command: &str) -> ErrorRecord {
        ErrorRecord { command: command.to_string(), kind: self.kind(), message: self.to_string() }
    }
}

/// Machine-readable failure written to stderr and `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: &'static str,
    pub message: String,
}

/// Attaches a description of the failing step to library errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for table2image::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}
