use std::path::PathBuf;

use kinetic_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for anything the user can fix in the config, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Config(_) => 2,
            CliError::Core(
                CoreError::InvalidArgument(_)
                | CoreError::InvalidSpectrum { .. }
                | CoreError::ArgumentOrder(_)
                | CoreError::Regime(_)
                | CoreError::Range { .. }
                | CoreError::Domain(_),
            ) => 2,
            CliError::Write { .. } | CliError::Core(_) => 1,
        }
    }
}
