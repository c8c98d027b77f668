use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    robself_cli::execute(robself_cli::Cli::parse())
}
