//! Command implementations behind the `genz` binary.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{cmd_classify_debug, cmd_eval, cmd_run, cmd_synth};
pub use config::RunConfig;

/// Failure classes with their process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 1).
    Usage(String),
    /// Unreadable or malformed input (exit 2).
    Data(String),
    /// Numerical breakdown (exit 3).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<genz_core::Error> for CliError {
    fn from(e: genz_core::Error) -> Self {
        use genz_core::Error as E;
        match e {
            E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Contract(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
