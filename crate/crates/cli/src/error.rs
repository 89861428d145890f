use std::path::PathBuf;

use thiserror::Error;

/// Driver failures, grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } | Self::MissingInput(_) => 3,
            Self::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

impl From<gsi_core::Error> for CliError {
    fn from(e: gsi_core::Error) -> Self {
        use gsi_core::{ContainerError as C, Error as E};
        match e {
            E::Container(C::Io { ref path, .. }) => Self::Io {
                path: path.clone(),
                message: e.to_string(),
            },
            E::Container(_) | E::StaleImage { .. } | E::MissingBasis { .. } => Self::MissingInput(e.to_string()),
            E::InvalidConfig(_)
            | E::InvalidParameter(_)
            | E::RankOutOfRange { .. }
            | E::TokenOutOfRange { .. }
            | E::ContextOverflow { .. }
            | E::Corpus { .. }
            | E::Empty(_) => Self::Config(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
