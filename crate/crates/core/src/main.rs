use std::process::ExitCode;

use clap::Parser;
use sde_select::cli::{run, Cli};

fn main() -> ExitCode {
    ExitCode::from(run(Cli::parse()))
}
