use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write report: {0}")]
    Report(String),

    #[error("numerical failure: {0}")]
    Numerical(oed_core::Error),

    #[error("validation failed: {failed} of {total} checks")]
    Validation { failed: usize, total: usize },
}

impl From<oed_core::Error> for CliError {
    fn from(e: oed_core::Error) -> Self {
        use oed_core::Error as E;
        match e {
            E::InvalidConfig(msg) => CliError::Config(msg),
            E::DesignSize { .. } | E::InvalidWeight { .. } => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation { .. } => 1,
            CliError::Config(_) | CliError::Io { .. } | CliError::Report(_) => 2,
            CliError::Numerical(_) => 3,
        })
    }
}
