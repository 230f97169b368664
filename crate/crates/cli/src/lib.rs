//! Config-driven experiment runner for the `pointdn` laboratory.
//!
//! Every subcommand reads an [`ExperimentConfig`], runs one experiment from
//! [`experiments`] and writes CSV artifacts plus a `manifest.json` into the
//! configured output directory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod io;
pub mod run;

pub use config::ExperimentConfig;
pub use run::{run, Check, Command, RunOutcome};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("solver failure: {0}")]
    Solver(pointdn::Error),
}

impl From<pointdn::Error> for CliError {
    fn from(e: pointdn::Error) -> Self {
        use pointdn::Error as E;
        match e {
            E::InvalidInput(_) | E::ShapeMismatch { .. } | E::Unresolvable { .. } | E::DataTooLarge { .. } => {
                CliError::Config(e.to_string())
            }
            other => CliError::Solver(other),
        }
    }
}

impl CliError {
    /// Process exit status: 2 for configuration errors, 3 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Solver(_) => 3,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Solver(_) => "solver",
        }
    }
}

/// Exit status when `--check` finds a threshold violation.
pub const CHECK_FAILED: i32 = 4;
