//! `rip`: aggregation, sweeps and checks from the command line.
//!
//! Exit status: 0 success, 1 usage error, 2 runtime failure, 3 a checked
//! threshold was exceeded.

mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match &cli.command {
        Command::Aggregate(a) => commands::aggregate(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::DemoSweep(a) => commands::demo_sweep(a),
        Command::DownsampleBench(a) => commands::downsample_bench(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Preprocess(a) => commands::preprocess(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
