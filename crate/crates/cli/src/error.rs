use std::path::PathBuf;

/// Exit status for a run whose criteria all passed.
pub const EXIT_PASS: i32 = 0;
/// At least one enabled criterion failed.
pub const EXIT_CRITERION: i32 = 1;
/// Bad command line or configuration.
pub const EXIT_USAGE: i32 = 2;
/// A solver diverged or another numerical failure stopped the run.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Violated model or control assumption; the message starts with its code.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad file format: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{context}: {source}")]
    Numerical {
        context: String,
        #[source]
        source: caginalp_core::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            _ => EXIT_USAGE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attaches a context string to numerical errors from the core crate.
pub(crate) trait Context<T> {
    fn context(self, what: &str) -> Result<T>;
}

impl<T> Context<T> for caginalp_core::Result<T> {
    fn context(self, what: &str) -> Result<T> {
        self.map_err(|source| CliError::Numerical { context: what.to_string(), source })
    }
}
