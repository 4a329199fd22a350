use thiserror::Error;

use crate::sweep::SweepAborted;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration ({} violation(s)):\n  {}", .0.len(), .0.join("\n  "))]
    ConfigInvalid(Vec<String>),
    #[error("{module}: {message}")]
    Pipeline { module: &'static str, message: String },
    #[error(transparent)]
    SweepAborted(#[from] SweepAborted),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn pipeline(module: &'static str, err: impl std::fmt::Display) -> Self {
        CliError::Pipeline { module, message: err.to_string() }
    }

    /// 2 for configuration problems, 3 for everything that failed after validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid(_) => 2,
            _ => 3,
        }
    }
}
