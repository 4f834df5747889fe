//! Configuration, artifact writers and experiment drivers behind the `modcomb` binary.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ExperimentId, MpcCompareConfig, ToyConfig};
pub use experiments::run_experiment;
pub use output::{emit_summary, Cell, Table};

use std::path::PathBuf;

/// Failure classes of a CLI invocation, each with its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<modcomb::Error> for CliError {
    fn from(e: modcomb::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Files written by one experiment run, relative to its output directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}
