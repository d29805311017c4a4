use std::process::ExitCode;

use thiserror::Error;

/// Failure classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Validation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        })
    }

    /// Library error raised while handling the `block` part of the config.
    pub fn from_core(block: &str, e: twolevel::Error) -> Self {
        use twolevel::Error as E;
        match e {
            E::InvalidParameter { field, reason } => CliError::Validation(format!("{block}.{field}: {reason}")),
            E::InvalidRateFunction(m) => CliError::Validation(format!("{block}.r: {m}")),
            E::GridMismatch { .. } | E::UnsupportedRateShape => CliError::Validation(format!("{block}: {e}")),
            E::Io(e) => CliError::Io(e.to_string()),
            E::Csv(e) => CliError::Io(e.to_string()),
            E::Json(e) => CliError::Io(e.to_string()),
            other => CliError::Numerical(format!("{block}: {other}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Attach the config block name to a library result.
pub trait Context<T> {
    fn ctx(self, block: &str) -> Result<T>;
}

impl<T> Context<T> for twolevel::Result<T> {
    fn ctx(self, block: &str) -> Result<T> {
        self.map_err(|e| CliError::from_core(block, e))
    }
}
