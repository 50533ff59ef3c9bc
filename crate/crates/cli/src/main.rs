//! `hfl`: command-line front end for the boundary detection pipeline.

mod args;
mod commands;
mod error;
mod io;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use clap::error::ErrorKind;

use crate::args::Cli;
use crate::error::{CliError, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE as u8),
            };
        }
    };
    let jobs = cli.jobs as usize;
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start {jobs} workers: {e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    match pool.install(|| commands::run(cli.command, jobs)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            if let CliError::Usage(_) = e {
                eprintln!("run `hfl --help` for usage");
            }
            ExitCode::from(code as u8)
        }
    }
}
