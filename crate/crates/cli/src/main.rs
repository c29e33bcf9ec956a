mod args;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Parser;

use args::{Cli, Command};
use commands::Outcome;

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    match &cli.command {
        Command::Audit(a) => commands::audit(a),
        Command::Diagnose(a) => commands::diagnose(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Recalibrate(a) => commands::recalibrate(a),
        Command::Simulate(a) => commands::simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Outcome::Retained) => ExitCode::SUCCESS,
        Ok(Outcome::Rejected) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
