//! `dnlb analyze`: diagnostic experiments emitting plot-ready CSV/JSON.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use dnlb_core::corpus::{load_queries, Corpus, Qrels};
use dnlb_core::encoder::load_checkpoint;
use dnlb_core::eval::{
    default_error_buckets, error_distribution, rank_profiles, theorem1_audit,
};
use dnlb_core::index::{train_pq, ExactIndex, Index, PqIndex};
use dnlb_core::trainer::{
    train, IndexKind, Strategy, TrainInputs, TrainLog, TrainResources, PQ_TRAIN_ITERS,
};

use crate::config::{ensure_out_dir, load_data, load_init, ExperimentConfig, LoadedData};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Histogram of per-query pairwise-error mass (errors.csv).
    Errors,
    /// Pool-vs-dynamic overlap curve from a training log (overlap.csv).
    Overlap,
    /// Hardness-concentration curve from a training log (phi.csv).
    Phi,
    /// Clamped vs. unclamped objective audit (theorem1.json).
    Theorem1,
    /// Train/test index-kind quality matrix (pq_matrix.csv).
    PqMatrix,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Which analysis to run.
    #[arg(long, value_enum)]
    mode: Mode,
    /// Directory receiving the analysis artifact.
    #[arg(long)]
    out: PathBuf,
    /// Encoder checkpoint (errors, theorem1).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Collection TSV (errors, theorem1).
    #[arg(long)]
    collection: Option<PathBuf>,
    /// Query TSV (errors, theorem1).
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Relevance judgments (errors, theorem1).
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Error clamp for the theorem1 audit.
    #[arg(long, default_value_t = 50)]
    topk: usize,
    /// trainlog.csv produced by `dnlb train` (overlap, phi).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Experiment config of a retrieval-in-the-loop run (pq-matrix).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Centroids per subspace for the pq-matrix index kinds.
    #[arg(long, default_value_t = 256)]
    pq_k: usize,
}

fn require<'a, T>(opt: &'a Option<T>, flag: &str, mode: &str) -> Result<&'a T> {
    opt.as_ref()
        .with_context(|| format!("--{flag} is required for --mode {mode}"))
}

pub fn run(args: &AnalyzeArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    match args.mode {
        Mode::Errors => errors_mode(args),
        Mode::Overlap => curve_mode(args, "overlap", |t| t.overlap),
        Mode::Phi => curve_mode(args, "phi", |t| t.phi),
        Mode::Theorem1 => theorem1_mode(args),
        Mode::PqMatrix => pq_matrix_mode(args),
    }
}

/// Load the four data files shared by the errors and theorem1 modes.
fn load_eval_world(
    args: &AnalyzeArgs,
    mode: &str,
) -> Result<(
    dnlb_core::encoder::DualEncoderParams,
    Corpus,
    Vec<dnlb_core::corpus::QueryRecord>,
    Qrels,
)> {
    let params = load_checkpoint(require(&args.checkpoint, "checkpoint", mode)?)?;
    let corpus = Corpus::load_tsv(require(&args.collection, "collection", mode)?)?;
    let queries = load_queries(require(&args.queries, "queries", mode)?)?;
    let qrels = Qrels::load_trec(require(&args.qrels, "qrels", mode)?)?;
    Ok((params, corpus, queries, qrels))
}

fn errors_mode(args: &AnalyzeArgs) -> Result<()> {
    let (params, corpus, queries, qrels) = load_eval_world(args, "errors")?;
    let index = Index::Exact(ExactIndex::from_params(&corpus, &params)?);
    let profiles = rank_profiles(&index, &params, &queries, &qrels, &corpus)?;
    let buckets = error_distribution(&profiles, &default_error_buckets())?;

    let mut csv = String::from("bucket_lo,bucket_hi,query_share,error_share\n");
    for b in &buckets {
        let hi = b.hi.map_or_else(String::new, |v| v.to_string());
        writeln!(csv, "{},{hi},{},{}", b.lo, b.query_share, b.error_share).unwrap();
    }
    let path = args.out.join("errors.csv");
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;

    println!(
        "wrote {} buckets over {} queries to {}",
        buckets.len(),
        profiles.len(),
        path.display()
    );
    if let Some(top) = buckets.last() {
        println!(
            "top bucket: query_share {} error_share {}",
            top.query_share, top.error_share
        );
    }
    Ok(())
}

/// Extract one optional per-tick column of a training log as a step curve.
fn curve_mode(
    args: &AnalyzeArgs,
    name: &str,
    field: impl Fn(&dnlb_core::trainer::TickRecord) -> Option<f64>,
) -> Result<()> {
    let log = TrainLog::load_csv(require(&args.log, "log", name)?)?;
    let mut csv = format!("step,{name}\n");
    let mut rows = 0usize;
    for tick in log.ticks() {
        if let Some(v) = field(tick) {
            writeln!(csv, "{},{v}", tick.step).unwrap();
            rows += 1;
        }
    }
    let path = args.out.join(format!("{name}.csv"));
    std::fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {rows} {name} points to {}", path.display());
    Ok(())
}

fn theorem1_mode(args: &AnalyzeArgs) -> Result<()> {
    let (params, corpus, queries, qrels) = load_eval_world(args, "theorem1")?;
    let point = theorem1_audit(&params, &corpus, &queries, &qrels, args.topk)?;

    let path = args.out.join("theorem1.json");
    let mut text = serde_json::to_string_pretty(&point)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;

    println!(
        "condition_holds {} objective_random {} objective_topk {}",
        point.condition_holds, point.objective_random, point.objective_topk
    );
    Ok(())
}

fn kind_label(kind: IndexKind) -> String {
    match kind {
        IndexKind::Exact => "exact".to_string(),
        IndexKind::Pq { m, .. } => format!("pq_m{m}"),
    }
}

fn index_of_kind(
    corpus: &Corpus,
    doc_params: &dnlb_core::encoder::DualEncoderParams,
    kind: IndexKind,
    seed: u64,
) -> Result<Index> {
    let exact = ExactIndex::from_params(corpus, doc_params)?;
    Ok(match kind {
        IndexKind::Exact => Index::Exact(exact),
        IndexKind::Pq { m, k_c } => {
            let (codebook, _) = train_pq(&exact, m, k_c, PQ_TRAIN_ITERS, seed)?;
            Index::Pq(PqIndex::encode_index(&exact, codebook)?)
        }
    })
}

fn pq_matrix_mode(args: &AnalyzeArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(require(&args.config, "config", "pq-matrix")?)?;
    if cfg.train.strategy != Strategy::Adore {
        bail!(
            "pq-matrix trains the query tower against a frozen document index; \
             the config must use strategy \"adore\", got \"{}\"",
            cfg.train.strategy
        );
    }
    let doc_path = cfg.doc_checkpoint.as_ref().with_context(|| {
        "pq-matrix needs doc_checkpoint in the config (the frozen document encoder)"
    })?;
    let doc_params = load_checkpoint(doc_path)?;
    let d = doc_params.d_emb;
    if d % 4 != 0 {
        bail!("pq-matrix needs an embedding width divisible by 4, got {d}");
    }

    let data: LoadedData = load_data(&cfg.data)?;
    if args.pq_k > data.corpus.len() {
        bail!(
            "--pq-k {} exceeds the {}-document collection",
            args.pq_k,
            data.corpus.len()
        );
    }
    let kinds = [
        IndexKind::Exact,
        IndexKind::Pq {
            m: d / 2,
            k_c: args.pq_k,
        },
        IndexKind::Pq {
            m: d / 4,
            k_c: args.pq_k,
        },
    ];

    let inputs = TrainInputs {
        corpus: &data.corpus,
        train_queries: &data.train_queries,
        dev_queries: &data.dev_queries,
        qrels: &data.qrels,
    };
    let init = load_init(&cfg)?;

    // Test indexes depend only on the frozen doc tower: build each once.
    let test_indexes = kinds
        .iter()
        .map(|&kind| index_of_kind(&data.corpus, &doc_params, kind, cfg.train.seed))
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("train\\test");
    for &kind in &kinds {
        write!(csv, ",{}", kind_label(kind)).unwrap();
    }
    csv.push('\n');

    for &train_kind in &kinds {
        let mut train_cfg = cfg.train.clone();
        train_cfg.index_kind = train_kind;
        let resources = TrainResources {
            pool: None,
            doc_params: Some(&doc_params),
        };
        let (params, _) = train(inputs, init.clone(), resources, &train_cfg, |_, _| Ok(()))?;

        write!(csv, "{}", kind_label(train_kind)).unwrap();
        for index in &test_indexes {
            let quality =
                dnlb_core::index::index_quality(index, &params, &data.dev_queries, &data.qrels, &data.corpus)?;
            write!(csv, ",{}", quality.mean_mrr10).unwrap();
        }
        csv.push('\n');
        log::info!("finished pq-matrix row {}", kind_label(train_kind));
    }

    let path = args.out.join("pq_matrix.csv");
    std::fs::write(&path, &csv).with_context(|| format!("writing {}", path.display()))?;
    print!("{csv}");
    println!("wrote {}", path.display());
    Ok(())
}
