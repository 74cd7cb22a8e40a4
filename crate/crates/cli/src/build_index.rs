//! `dnlb build-index`: embed a collection and persist a searchable index.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use dnlb_core::corpus::{load_queries, Corpus, Qrels};
use dnlb_core::encoder::load_checkpoint;
use dnlb_core::index::{index_quality, train_pq, ExactIndex, Index, PqIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Exact,
    Pq,
}

#[derive(Args, Debug)]
pub struct BuildIndexArgs {
    /// Encoder checkpoint whose document tower embeds the collection.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Collection TSV (`doc_id<TAB>text`).
    #[arg(long)]
    collection: PathBuf,
    /// Index representation to build.
    #[arg(long, value_enum, default_value_t = KindArg::Exact)]
    kind: KindArg,
    /// Number of product-quantization subspaces (must divide the embedding width).
    #[arg(long, required_if_eq("kind", "pq"))]
    pq_m: Option<usize>,
    /// Centroids per subspace (at most 256).
    #[arg(long, required_if_eq("kind", "pq"))]
    pq_k: Option<usize>,
    /// k-means iterations for codebook training.
    #[arg(long, default_value_t = 20)]
    pq_iters: usize,
    /// Seed for codebook training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output index file.
    #[arg(long)]
    out: PathBuf,
    /// Optional query TSV; with --qrels, prints the index's dev MRR@10.
    #[arg(long, requires = "qrels")]
    queries: Option<PathBuf>,
    /// Judgments for --queries.
    #[arg(long, requires = "queries")]
    qrels: Option<PathBuf>,
}

pub fn run(args: &BuildIndexArgs) -> Result<()> {
    let params = load_checkpoint(&args.checkpoint)?;
    let corpus = Corpus::load_tsv(&args.collection)?;
    let exact = ExactIndex::from_params(&corpus, &params)?;

    let index = match args.kind {
        KindArg::Exact => Index::Exact(exact),
        KindArg::Pq => {
            let (m, k_c) = match (args.pq_m, args.pq_k) {
                (Some(m), Some(k)) => (m, k),
                _ => bail!("--pq-m and --pq-k are required for --kind pq"),
            };
            let (codebook, _report) = train_pq(&exact, m, k_c, args.pq_iters, args.seed)?;
            Index::Pq(PqIndex::encode_index(&exact, codebook)?)
        }
    };

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    index.save(&args.out)?;
    println!(
        "built {} index over {} documents (d_emb={}) at {}",
        index.kind_name(),
        index.len(),
        index.d_emb(),
        args.out.display()
    );

    if let (Some(queries_path), Some(qrels_path)) = (&args.queries, &args.qrels) {
        let queries = load_queries(queries_path)?;
        let qrels = Qrels::load_trec(qrels_path)?;
        let quality = index_quality(&index, &params, &queries, &qrels, &corpus)?;
        println!(
            "mrr10 {} over {} queries ({} skipped)",
            quality.mean_mrr10, quality.evaluated, quality.skipped
        );
    }
    Ok(())
}
