//! `dnlb eval`: score a checkpoint + index pair on a judged query set.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};

use dnlb_core::corpus::{load_queries, Corpus, Qrels};
use dnlb_core::encoder::load_checkpoint;
use dnlb_core::eval::{evaluate, run_from_index, save_trec_run, GainScheme};
use dnlb_core::index::Index;

use crate::config::{ensure_out_dir, parse_metrics};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GainArg {
    Exponential,
    Linear,
}

impl From<GainArg> for GainScheme {
    fn from(g: GainArg) -> Self {
        match g {
            GainArg::Exponential => GainScheme::Exponential,
            GainArg::Linear => GainScheme::Linear,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Encoder checkpoint (query tower scores the run).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Index file built by `build-index`.
    #[arg(long)]
    index: PathBuf,
    /// Collection TSV the index was built from.
    #[arg(long)]
    collection: PathBuf,
    /// Query TSV to evaluate.
    #[arg(long)]
    queries: PathBuf,
    /// Relevance judgments.
    #[arg(long)]
    qrels: PathBuf,
    /// Comma-separated metric list.
    #[arg(long, default_value = "mrr@10,ndcg@10,r@100")]
    metrics: String,
    /// Run depth for run.trec.
    #[arg(long, default_value_t = 100)]
    depth: usize,
    /// Also compute pairwise-error diagnostics with this clamp.
    #[arg(long)]
    errors_topk: Option<usize>,
    /// Run tag written to run.trec.
    #[arg(long, default_value = "dnlb")]
    tag: String,
    /// Gain scheme for graded metrics.
    #[arg(long, value_enum, default_value_t = GainArg::Exponential)]
    gain: GainArg,
    /// Directory receiving run.trec, report.json, report.csv.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let metrics = parse_metrics(&args.metrics)?;
    let params = load_checkpoint(&args.checkpoint)?;
    let index = Index::load(&args.index)?;
    let corpus = Corpus::load_tsv(&args.collection)?;
    let queries = load_queries(&args.queries)?;
    let qrels = Qrels::load_trec(&args.qrels)?;
    ensure_out_dir(&args.out)?;

    let run = run_from_index(&index, &params, &queries, &corpus, args.depth)?;
    save_trec_run(args.out.join("run.trec"), &run, &args.tag)?;

    let report = evaluate(
        &index,
        &params,
        &queries,
        &qrels,
        &corpus,
        &metrics,
        args.gain.into(),
        args.errors_topk,
    )?;
    report.save_json(args.out.join("report.json"))?;
    report.save_csv(args.out.join("report.csv"))?;

    for (name, mean) in report.metrics.iter().zip(&report.means) {
        println!("{name} {mean}");
    }
    println!(
        "evaluated {} queries ({} skipped) against {} index {}",
        report.evaluated,
        report.skipped,
        index.kind_name(),
        args.index.display()
    );
    Ok(())
}
