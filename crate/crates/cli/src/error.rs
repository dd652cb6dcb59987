use std::path::PathBuf;

use thiserror::Error;

/// Conventional exit codes (sysexits).
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("cannot read {path}: {detail}")]
    NoInput { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] chromaholo::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use chromaholo::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::NoInput { .. } => EXIT_NO_INPUT,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::InvalidDimension(_) => EXIT_USAGE,
                E::Missing(_) | E::Image { .. } => EXIT_NO_INPUT,
                E::Io { .. } => EXIT_IO,
                E::EmptyDataset
                | E::NonFinite { .. }
                | E::ShapeMismatch { .. }
                | E::Parse { .. }
                | E::Json(_)
                | E::OutOfRange(_)
                | E::DimensionMismatch(_) => EXIT_DATA,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
