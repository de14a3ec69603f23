use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or configuration; exit code 2.
    #[error("{0}")]
    Usage(String),
    #[error("missing input files in {}: {}", dir.display(), files.join(", "))]
    MissingFiles { dir: PathBuf, files: Vec<String> },
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<simcal_core::Error> for CliError {
    fn from(e: simcal_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
