//! `dnlb gen-data`: write a synthetic benchmark to disk.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use dnlb_core::corpus::save_queries;
use dnlb_core::corpus::synthetic::{generate_synthetic, SyntheticConfig};

use crate::config::ensure_out_dir;

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// JSON file describing the benchmark shape (defaults apply if omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Generator seed; identical seeds give byte-identical files.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory receiving collection.tsv, queries.{train,dev}.tsv, qrels.txt.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &GenDataArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str::<SyntheticConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
        }
        None => SyntheticConfig::default(),
    };
    let data = generate_synthetic(&cfg, args.seed)?;
    ensure_out_dir(&args.out)?;

    let write = |name: &str| -> PathBuf { args.out.join(name) };
    data.corpus.save_tsv(write("collection.tsv"))?;
    save_queries(&data.train_queries, write("queries.train.tsv"))?;
    save_queries(&data.dev_queries, write("queries.dev.tsv"))?;
    data.qrels.save_trec(write("qrels.txt"))?;

    println!(
        "wrote {} documents, {} train queries, {} dev queries, {} judged queries to {}",
        data.corpus.len(),
        data.train_queries.len(),
        data.dev_queries.len(),
        data.qrels.num_queries(),
        args.out.display()
    );
    Ok(())
}
