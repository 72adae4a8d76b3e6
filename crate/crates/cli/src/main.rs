//! `hts-cluster` command-line entry point.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod artifacts;
mod commands;
mod error;

use clap::Parser;

use args::{Cli, Command, Common};
use error::CliError;

fn init(common: &Common) -> Result<(), CliError> {
    let level = match common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    if let Some(n) = commands::threads(common)? {
        if n == 0 {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Simulate(a) => &a.common,
        Command::Cluster(a) => &a.common,
        Command::Evaluate(a) => &a.common,
        Command::Forecast(a) => &a.common,
    };
    init(common)?;
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Forecast(a) => commands::forecast(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
