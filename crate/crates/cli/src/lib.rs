//! Experiment orchestration and command-line plumbing for `pbl`.

pub mod commands;
pub mod config;
pub mod experiment;

/// Failure classes with distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or arguments; exit code 2.
    #[error("{0:#}")]
    Config(anyhow::Error),
    /// Failure while computing or writing results; exit code 3.
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(anyhow::anyhow!("{msg}"))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<pbl_core::PblError> for CliError {
    fn from(e: pbl_core::PblError) -> Self {
        CliError::Runtime(e.into())
    }
}
