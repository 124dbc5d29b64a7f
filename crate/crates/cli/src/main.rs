//! `blmm`: association scans, SNP-set tests, fine-mapping, simulation and
//! ABF validation from tab-separated inputs.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure, 4 quadrature
//! oracle failure.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod common;
mod config;
mod finemap;
mod scan;
mod settest;
mod simulate;
mod validate;

use common::{CliResult, Failure, RunArgs};

#[derive(Parser, Debug)]
#[command(name = "blmm", version, about = "Bayesian linear mixed model association analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Scan(scan::ScanArgs),
    Settest(settest::SettestArgs),
    Finemap(finemap::FinemapArgs),
    Simulate(simulate::SimulateArgs),
    ValidateAbf(validate::ValidateArgs),
}

impl Command {
    fn run_args(&self) -> &RunArgs {
        match self {
            Command::Scan(a) => &a.run,
            Command::Settest(a) => &a.run,
            Command::Finemap(a) => &a.run,
            Command::Simulate(a) => &a.run,
            Command::ValidateAbf(a) => &a.run,
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let threads = cli.command.run_args().threads;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::input(format!("cannot start {threads} threads: {e}")))?;
    }
    match &cli.command {
        Command::Scan(a) => scan::run(a),
        Command::Settest(a) => settest::run(a),
        Command::Finemap(a) => finemap::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::ValidateAbf(a) => validate::run(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {f}");
            return ExitCode::from(f.code);
        }
    };
    let cli = Cli::parse_from(args);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
