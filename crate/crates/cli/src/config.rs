//! The experiment configuration file and shared data-loading helpers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use dnlb_core::corpus::bm25::{Bm25Index, Bm25Params};
use dnlb_core::corpus::{load_queries, Corpus, Qrels, QueryRecord};
use dnlb_core::encoder::{init_params, load_checkpoint, Arch, DualEncoderParams};
use dnlb_core::index::{ExactIndex, Index};
use dnlb_core::sampling::{build_static_negatives, NegativePool, Retriever};
use dnlb_core::trainer::TrainConfig;

/// One experiment, end to end: where the data lives, what model to build,
/// how to train it, and which prerequisites to prepare first.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Static-pool construction; required by pool-based strategies.
    #[serde(default)]
    pub pool: Option<PoolConfig>,
    /// Frozen document-encoder checkpoint (required for adore).
    #[serde(default)]
    pub doc_checkpoint: Option<PathBuf>,
    /// Start training from this checkpoint instead of a fresh init.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    /// Additionally write `checkpoint-{step}.dnlb` on matching eval ticks.
    #[serde(default)]
    pub checkpoint_every: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Paths to the four data files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub collection: PathBuf,
    pub train_queries: PathBuf,
    pub dev_queries: PathBuf,
    pub qrels: PathBuf,
}

/// Model shape and initialization.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub hash_dim: usize,
    pub d_emb: usize,
    /// Hidden width for `mlp`; must stay 0 for `linear`.
    pub hidden: usize,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Linear,
            hash_dim: 8192,
            d_emb: 32,
            hidden: 0,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn init(&self) -> Result<DualEncoderParams> {
        Ok(init_params(
            self.arch,
            self.hash_dim,
            self.d_emb,
            self.hidden,
            self.init_seed,
        )?)
    }
}

/// How the static hard-negative pool is retrieved before training.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default = "default_k_pool")]
    pub k_pool: usize,
    #[serde(default)]
    pub retriever: PoolRetriever,
}

fn default_k_pool() -> usize {
    200
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolRetriever {
    #[default]
    Bm25,
    /// A dense warm-up model: its document tower indexes the corpus and
    /// its query tower retrieves the pool.
    Dense { checkpoint: PathBuf },
}

/// The four data files, loaded.
pub struct LoadedData {
    pub corpus: Corpus,
    pub train_queries: Vec<QueryRecord>,
    pub dev_queries: Vec<QueryRecord>,
    pub qrels: Qrels,
}

pub fn load_data(data: &DataConfig) -> Result<LoadedData> {
    let corpus = Corpus::load_tsv(&data.collection)?;
    let train_queries = load_queries(&data.train_queries)?;
    let dev_queries = load_queries(&data.dev_queries)?;
    let qrels = Qrels::load_trec(&data.qrels)?;
    Ok(LoadedData {
        corpus,
        train_queries,
        dev_queries,
        qrels,
    })
}

/// Resolve the training init: a checkpoint if given, a fresh init otherwise.
pub fn load_init(cfg: &ExperimentConfig) -> Result<DualEncoderParams> {
    match &cfg.init_checkpoint {
        Some(path) => Ok(load_checkpoint(path)?),
        None => cfg.model.init(),
    }
}

/// Build the static pool described by `pool_cfg`.
pub fn build_pool(
    pool_cfg: &PoolConfig,
    data: &LoadedData,
    step: u64,
) -> Result<NegativePool> {
    let pool = match &pool_cfg.retriever {
        PoolRetriever::Bm25 => {
            let bm25 = Bm25Index::build(&data.corpus, Bm25Params::default());
            build_static_negatives(
                &Retriever::Bm25(&bm25),
                &data.train_queries,
                pool_cfg.k_pool,
                &data.qrels,
                &data.corpus,
                step,
            )?
        }
        PoolRetriever::Dense { checkpoint } => {
            let params = load_checkpoint(checkpoint)?;
            let index = Index::Exact(ExactIndex::from_params(&data.corpus, &params)?);
            build_static_negatives(
                &Retriever::Dense {
                    params: &params,
                    index: &index,
                },
                &data.train_queries,
                pool_cfg.k_pool,
                &data.qrels,
                &data.corpus,
                step,
            )?
        }
    };
    Ok(pool)
}

/// Create `dir` (and parents) and fail loudly if that is impossible.
pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(())
}

/// Parse a comma-separated metric list, rejecting empty entries.
pub fn parse_metrics(spec: &str) -> Result<Vec<dnlb_core::eval::Metric>> {
    let mut metrics = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            bail!("empty entry in metric list {spec:?}");
        }
        metrics.push(part.parse::<dnlb_core::eval::Metric>()?);
    }
    Ok(metrics)
}
