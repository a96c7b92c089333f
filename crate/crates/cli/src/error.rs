use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("ConfigParse: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] stefan_core::Error),

    #[error("IO error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 for bad input, 2 for a solver failure, 3 for IO.
    pub fn exit_code(&self) -> u8 {
        use stefan_core::Error as E;
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Core(E::PreconditionFailed(_) | E::PreconditionLipschitz { .. }) => 1,
            CliError::Core(_) => 2,
            CliError::Io { .. } => 3,
        }
    }
}
