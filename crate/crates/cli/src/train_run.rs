//! `dnlb train`: run one training experiment described by a JSON config.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use dnlb_core::encoder::{load_checkpoint, save_checkpoint};
use dnlb_core::trainer::{train, TrainInputs, TrainResources};

use crate::config::{build_pool, ensure_out_dir, load_data, load_init, ExperimentConfig};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving checkpoint.dnlb, trainlog.csv, and any pool files.
    #[arg(long)]
    out: PathBuf,
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    ensure_out_dir(&args.out)?;

    let data = load_data(&cfg.data)?;
    let init = load_init(&cfg)?;

    let pool = match &cfg.pool {
        Some(pool_cfg) => {
            let pool = build_pool(pool_cfg, &data, 0)?;
            let pool_path = args.out.join("pool.tsv");
            pool.save(&data.corpus, &pool_path)?;
            log::info!(
                "built {} pool of depth {} for {} queries",
                pool.provenance(),
                pool.k_pool(),
                pool.len()
            );
            Some(pool)
        }
        None => None,
    };
    let doc_params = match &cfg.doc_checkpoint {
        Some(path) => Some(
            load_checkpoint(path)
                .with_context(|| format!("loading document encoder {}", path.display()))?,
        ),
        None => None,
    };

    let inputs = TrainInputs {
        corpus: &data.corpus,
        train_queries: &data.train_queries,
        dev_queries: &data.dev_queries,
        qrels: &data.qrels,
    };
    let resources = TrainResources {
        pool: pool.as_ref(),
        doc_params: doc_params.as_ref(),
    };

    let checkpoint_every = cfg.checkpoint_every;
    let out_dir = args.out.clone();
    let (params, log) = train(inputs, init, resources, &cfg.train, |tick, params| {
        log::info!(
            "step {}: loss {} mrr10 {} topk_errors {} phi {} overlap {}",
            tick.step,
            fmt_opt(tick.loss),
            fmt_opt(tick.mrr10),
            fmt_opt(tick.topk_errors),
            fmt_opt(tick.phi),
            fmt_opt(tick.overlap),
        );
        if let Some(every) = checkpoint_every {
            if tick.step > 0 && tick.step % every == 0 {
                save_checkpoint(params, out_dir.join(format!("checkpoint-{}.dnlb", tick.step)))?;
            }
        }
        Ok(())
    })?;

    let checkpoint_path = args.out.join("checkpoint.dnlb");
    save_checkpoint(&params, &checkpoint_path)?;
    let log_path = args.out.join("trainlog.csv");
    log.save_csv(&log_path)?;

    let last = log
        .ticks()
        .last()
        .and_then(|t| t.mrr10)
        .map_or_else(|| "n/a".to_string(), |v| v.to_string());
    println!(
        "trained {} for {} steps (seed {}); final dev mrr10 {}; wrote {} and {}",
        cfg.train.strategy,
        cfg.train.steps,
        cfg.train.seed,
        last,
        checkpoint_path.display(),
        log_path.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}
