use std::path::PathBuf;

use miaod_core::Error as CoreError;

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {detail}")]
    Io { path: PathBuf, detail: String },
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error(transparent)]
    Core(CoreError),
    /// Some sweep cells failed; carries the first failure's code.
    #[error("{summary}")]
    SweepFailed { summary: String, exit_code: i32 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.into(), detail: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Core(_) => 1,
            CliError::SweepFailed { exit_code, .. } => *exit_code,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e.root() {
            CoreError::NonFinite { .. } => CliError::Numeric(msg),
            CoreError::Io { path, .. } => CliError::Io { path: path.clone(), detail: msg },
            CoreError::Format { path, .. } => CliError::Io { path: path.clone(), detail: msg },
            CoreError::MissingSample { .. } | CoreError::ChecksumMismatch { .. } => {
                CliError::Io { path: PathBuf::new(), detail: msg }
            }
            CoreError::InvalidArgument(_)
            | CoreError::Placement { .. }
            | CoreError::PoolExhausted { .. }
            | CoreError::ShapeMismatch { .. } => CliError::Config(msg),
            _ => CliError::Core(e),
        }
    }
}
