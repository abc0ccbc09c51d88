mod cli;
mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{CommandFactory, FromArgMatches};

use crate::cli::Cli;
use crate::commands::Ctx;
use crate::config::{RunConfig, UsageError};

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        // usage errors exit 2, --help and --version exit 0
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (_, sub_matches) = matches.subcommand().expect("a subcommand is required");

    match run(cli, &matches, sub_matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli, matches: &clap::ArgMatches, sub_matches: &clap::ArgMatches) -> anyhow::Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let from_cli = |id: &str| {
        matches.value_source(id) == Some(ValueSource::CommandLine)
            || sub_matches.value_source(id) == Some(ValueSource::CommandLine)
    };
    let seed = match cfg.seed {
        Some(s) if !from_cli("seed") => s,
        _ => cli.seed,
    };
    let threads = match cfg.threads {
        Some(t) if !from_cli("threads") => t,
        _ => cli.threads,
    };
    dictlearn::par::configure_threads(threads);
    let ctx = Ctx {
        seed,
        threads,
        base_dir: cfg.base_dir.clone(),
    };
    commands::dispatch(cli.command, sub_matches, cfg, &ctx)
}
