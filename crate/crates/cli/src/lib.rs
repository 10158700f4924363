//! The `wipu` command-line tool.
//!
//! Every command writes into one output directory holding a `manifest.json`
//! (argv, resolved config, timestamps) next to its artifacts. CSV outputs
//! never contain timestamps, so rerunning a command reproduces them byte for
//! byte.

pub mod args;
pub mod commands;
pub mod dataset;
pub mod grid;
pub mod manifest;
pub mod report;
pub mod results;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;

pub use args::{Cli, Command};

/// Parses `argv` (including the program name), expands `--config` files and
/// runs the command. Errors are printed to stderr.
pub fn run<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let expanded = match args::expand_config(&argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli, &expanded) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<args::UsageError>().is_some() {
                eprintln!("\nRun `wipu --help` or `wipu <command> --help` for usage.");
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
