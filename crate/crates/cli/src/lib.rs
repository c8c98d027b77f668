//! Command implementations behind the `robself` binary.

pub mod args;
pub mod commands;
pub mod output;

use std::fmt;
use std::process::ExitCode;

pub use args::{Cli, Command};

/// Failure of a command, carrying its exit status.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a check ran and did not pass.
    Failed(String),
    /// Exit 2: unusable arguments.
    Usage(String),
    /// Exit 3: inputs violate a contract (shape, channels, missing files).
    Input(robself::Error),
    /// Exit 4: optimization diverged.
    Diverged(robself::Error),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Failed(m) | CliError::Usage(m) => f.write_str(m),
            CliError::Input(e) | CliError::Diverged(e) => write!(f, "{e}"),
        }
    }
}

impl From<robself::Error> for CliError {
    fn from(e: robself::Error) -> Self {
        match e {
            robself::Error::Divergence { .. } => CliError::Diverged(e),
            other => CliError::Input(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.into())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Runs a parsed command line and maps the outcome to an exit status.
pub fn execute(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Run(a) => commands::run::cmd_run(&a),
        Command::Bench(a) => commands::bench::cmd_bench(&a),
        Command::Synth(a) => commands::synth::cmd_synth(&a),
        Command::Gradcheck(a) => commands::gradcheck::cmd_gradcheck(&a),
        Command::Config(a) => commands::config::cmd_config(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
