//! `cbm`: solve, generate, benchmark and export multi-robot task planning
//! instances.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error or unreadable /
//! invalid input, 3 best solution infeasible (violations written to
//! `violations.json`), 4 instance too large for LP export.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CBM_LOG", "warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve(a) => commands::solve(a, argv),
        Command::Generate(a) => commands::generate(a, argv),
        Command::Bench(a) => commands::bench(a, argv),
        Command::ExportLp(a) => commands::export(a, argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
