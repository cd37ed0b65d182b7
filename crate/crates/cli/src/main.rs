use clap::Parser;
use std::process::ExitCode;

fn main() -> ExitCode {
    stochacq_cli::run(stochacq_cli::Cli::parse())
}
