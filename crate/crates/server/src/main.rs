use std::process::ExitCode;

use clap::Parser;
use textclust_server::cli::{run, Cli};

fn main() -> ExitCode {
    run(Cli::parse())
}
