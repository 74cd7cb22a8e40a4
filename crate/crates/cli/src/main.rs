//! `dnlb`: a desk-scale laboratory for dense-retrieval training experiments.
//!
//! One binary, five subcommands: `gen-data` fabricates a benchmark,
//! `build-index` embeds a collection, `train` runs a negative-sampling
//! strategy, `eval` scores a checkpoint, and `analyze` produces the
//! diagnostic artifacts (error histograms, training curves, index
//! matrices). Every command is deterministic given its inputs and `--seed`,
//! and writes only under its `--out` path.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. The `DNLB_LOG`
//! env var (error/warn/info/debug) controls stderr logging.

use anyhow::Result;
use clap::{Parser, Subcommand};

mod analyze;
mod build_index;
mod config;
mod eval_run;
mod gen_data;
mod train_run;

#[derive(Parser, Debug)]
#[command(
    name = "dnlb",
    version,
    about = "Dense-retrieval negative-sampling laboratory",
    propagate_version = true
)]
struct Cli {
    /// Cap the worker-thread pool (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic retrieval benchmark.
    GenData(gen_data::GenDataArgs),
    /// Embed a collection with a checkpoint's document tower and save an index.
    BuildIndex(build_index::BuildIndexArgs),
    /// Train a dual encoder as described by an experiment config.
    Train(train_run::TrainArgs),
    /// Score a checkpoint + index pair on a judged query set.
    Eval(eval_run::EvalArgs),
    /// Run a diagnostic analysis and emit plot-ready CSV/JSON.
    Analyze(analyze::AnalyzeArgs),
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DNLB_LOG", "warn")).init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("could not cap the thread pool: {e}");
        }
    }
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(args) => gen_data::run(args),
        Command::BuildIndex(args) => build_index::run(args),
        Command::Train(args) => train_run::run(args),
        Command::Eval(args) => eval_run::run(args),
        Command::Analyze(args) => analyze::run(args),
    }
}
