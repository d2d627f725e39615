use std::path::PathBuf;

use retro_core::error::{EngineError, ExecError, LogError, SqlError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {err}")]
    Log { path: PathBuf, err: LogError },
    #[error("{path}:{line}: {msg}")]
    Sidecar { path: PathBuf, line: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("invalid workload spec: {0}")]
    Spec(String),
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
    #[error("snapshot {path}: {msg}")]
    Snapshot { path: PathBuf, msg: String },
    #[error("parse error: {0}")]
    Parse(#[from] SqlError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("verification failed: {0} table digest(s) differ from the oracle")]
    VerifyMismatch(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::VerifyMismatch(_) => 3,
            _ => 2,
        }
    }
}
