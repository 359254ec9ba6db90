use std::path::Path;

use alo_core::AloError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] AloError),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    /// Outputs were written, but some grid points or stages failed numerically.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => 2,
            CliError::Numeric(_) => 3,
            CliError::Core(e) => match e {
                AloError::StaleFit { .. }
                | AloError::Conditioning { .. }
                | AloError::Degenerate(_)
                | AloError::DegenerateSpectrum(_)
                | AloError::Curvature { .. }
                | AloError::Assumption(_) => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
