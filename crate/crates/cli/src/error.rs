use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] inr_denoise::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use inr_denoise::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidArgument(_)) => 2,
            CliError::Core(E::NonFiniteOutput(_)) => 4,
            _ => 3,
        }
    }
}
