use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("output directory {0} already exists (pass --force to replace it)")]
    OutputExists(PathBuf),

    #[error("{failed} of {total} runs failed: {}", .details.join("; "))]
    RunsFailed {
        failed: usize,
        total: usize,
        details: Vec<String>,
    },

    #[error("run {run}: metric `{metric}` is not available")]
    MissingMetric { run: String, metric: String },

    #[error("{path}: {reason}")]
    BadRunDir { path: PathBuf, reason: String },

    #[error(transparent)]
    Core(#[from] secureafl::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn bad_dir(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CliError::BadRunDir {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// 0 success, 1 run failure, 2 config error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::OutputExists(_) => 2,
            CliError::Core(secureafl::Error::Config { .. } | secureafl::Error::Parse(_)) => 2,
            _ => 1,
        }
    }
}
