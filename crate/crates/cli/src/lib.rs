//! Library side of the `stmix` command: argument definitions, run
//! configuration and the subcommand implementations.

use std::path::{Path, PathBuf};

use thiserror::Error;

use stmix_core::alignio::AlignIoError;
use stmix_core::corpus::{CorpusError, FrameError};
use stmix_core::mixers::MixError;
use stmix_core::neighbors::NeighborError;
use stmix_core::objectives::ObjectiveError;
use stmix_core::toymodel::ModelError;

pub mod args;
pub mod commands;
pub mod config;

pub use args::{Cli, Command};
pub use config::RunConfig;

/// Failure of a subcommand; [`CliError::exit_code`] maps it onto the
/// process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 1 for validation and data failures, 2 for I/O and usage failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => 1,
            CliError::Usage(_) | CliError::Io { .. } => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<FrameError> for CliError {
    fn from(e: FrameError) -> Self {
        match e {
            FrameError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AlignIoError> for CliError {
    fn from(e: AlignIoError) -> Self {
        match e {
            AlignIoError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Data(other.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(MixError, NeighborError, ModelError, ObjectiveError);

/// Runs a parsed command line, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    commands::dispatch(cli, out)
}
