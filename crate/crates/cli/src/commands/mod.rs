mod analyze;
mod eval;
mod interp;
mod patch;
mod synth;
mod train;

use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::ArgMatches;

use crate::cli::Command;
use crate::config::{RunConfig, UsageError};
use crate::manifest::Run;

/// Settings shared by every subcommand.
pub struct Ctx {
    pub seed: u64,
    pub threads: usize,
    pub base_dir: PathBuf,
}

impl Ctx {
    fn run(&self, command: &'static str, out: PathBuf) -> Run {
        Run::new(command, out, self.threads)
    }
}

pub fn dispatch(command: Command, matches: &ArgMatches, cfg: RunConfig, ctx: &Ctx) -> Result<()> {
    match command {
        Command::Synth(a) => synth::run(a, matches, cfg.synth, ctx),
        Command::Train(a) => train::run(a, matches, cfg.train, ctx),
        Command::Eval(a) => eval::run_eval(a, matches, cfg.eval, ctx),
        Command::Baseline(a) => eval::run_baseline(a, matches, cfg.baseline, ctx),
        Command::Histogram(a) => analyze::run_histogram(a, matches, cfg.histogram, ctx),
        Command::LogitEffect(a) => analyze::run_logit_effect(a, matches, cfg.logit_effect, ctx),
        Command::Interp(a) => interp::run(a, matches, cfg.interp, ctx),
        Command::Patch(a) => patch::run_patch(a, matches, cfg.patch, ctx),
        Command::Tree(a) => patch::run_tree(a, matches, cfg.tree, ctx),
    }
}

/// Turns a parameter check failure from the library into a usage error.
fn usage(e: dictlearn::Error) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

fn announce(path: &Path) {
    println!("wrote {}", path.display());
}
