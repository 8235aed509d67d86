//! Command-line front end: data ingestion, fit orchestration and report and
//! graph emission. Exit codes: 0 success, 1 usage or configuration error,
//! 2 data error.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod graph;
pub mod io;

use std::ffi::OsString;

use clap::error::ErrorKind;
use clap::Parser;

use crate::cli::{Cli, Command};
use crate::error::{CliError, CliResult};

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, cli.timing),
        Command::Fit(a) => commands::fit(a, cli.timing),
        Command::Graph(a) => commands::graph(a, cli.timing),
        Command::Eval(a) => commands::eval(a, cli.timing),
        Command::Bench(a) => commands::bench(a, cli.timing),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("sparfa: {e}");
            e.exit_code()
        }
    }
}
