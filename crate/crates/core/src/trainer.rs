//! Optimizers and the training loops that tie encoders, negative
//! selection, losses, and indexes together.
//!
//! Every strategy reduces to the same shape: each step assembles a
//! [`StepPlan`] — a batch of rows, each holding the query's features and
//! a list of weighted (positive, negative) pairs — and the plan's loss is
//!
//! ```text
//! L = (1/B) · Σ_rows Σ_pairs coeff · ranknet(s⁺, s⁻)
//! ```
//!
//! with `B` the batch size. The strategies differ only in where the
//! negatives and coefficients come from:
//!
//! * `random` — uniform corpus samples, coeff 1.
//! * `in_batch` — the other rows' documents, coeff 1.
//! * `static_hard` — per-step picks from a frozen pre-retrieved pool.
//! * `static_refresh` — same, with the pool rebuilt every `R` steps.
//! * `star` — pool pairs at coeff 1 plus in-batch pairs at coeff `α`.
//! * `adore` — retrieval-in-the-loop: the current query tower searches a
//!   frozen document index, the top misranked documents become negatives,
//!   and each pair is weighted by the metric swap delta `|Δ𝓜|` (treated
//!   as a constant). Only the query tower receives gradient.
//!
//! Training is deterministic: identical config and seed reproduce the
//! parameters and the log bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{hash_features, Corpus, DocId, FeatureVector, Qrels, QueryRecord, QueryRelevance};
use crate::encoder::{backprop, dot, DualEncoderParams, ParamGradient, TowerKind};
use crate::error::{Error, Result};
use crate::eval::{
    overlap_ratio, quality_phi, rank_profiles, topk_pairwise_errors, GainScheme, Metric,
};
use crate::hashing::{fnv1a_64, stream_rng};
use crate::index::{index_quality, train_pq, ExactIndex, Index, PqIndex};
use crate::loss::{delta_metric, ranknet_loss, RankedList};
use crate::sampling::{
    dynamic_hard_with_hits, in_batch_negatives, refresh_static, sample_from_pool,
    sample_random_negatives, BatchRow, NegativePool, PoolSelection,
};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Lloyd iterations when a compressed document index is trained in-loop.
/// Public so external tools can rebuild the exact same index from a
/// checkpoint and config.
pub const PQ_TRAIN_ITERS: usize = 20;

/// Negative-selection strategy for a training run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    InBatch,
    StaticHard,
    StaticRefresh,
    Star,
    Adore,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Random,
        Strategy::InBatch,
        Strategy::StaticHard,
        Strategy::StaticRefresh,
        Strategy::Star,
        Strategy::Adore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::InBatch => "in_batch",
            Strategy::StaticHard => "static_hard",
            Strategy::StaticRefresh => "static_refresh",
            Strategy::Star => "star",
            Strategy::Adore => "adore",
        }
    }

    /// Strategies that train against a pre-retrieved static pool.
    pub fn needs_pool(self) -> bool {
        matches!(
            self,
            Strategy::StaticHard | Strategy::StaticRefresh | Strategy::Star
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy {s:?}; valid strategies are random, in_batch, \
                     static_hard, static_refresh, star, adore"
                ))
            })
    }
}

/// First-order optimizer family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

/// Document index flavor for retrieval-in-the-loop training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKind {
    #[default]
    Exact,
    Pq {
        m: usize,
        k_c: usize,
    },
}

/// Hyperparameters of one training run. Unknown JSON fields are rejected,
/// unset ones take the documented defaults.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Queries per step.
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Hard negatives drawn per query (random / pool strategies).
    #[serde(default = "default_negs_per_query")]
    pub negs_per_query: usize,
    pub steps: u64,
    /// Constant learning rate; `None` picks 0.05 for sgd, 1e-3 for adam.
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Velocity decay for sgd (0 = plain gradient descent).
    #[serde(default)]
    pub momentum: f64,
    /// Weight of the in-batch stabilizer term (star only), strictly in (0,1).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Retrieval depth for dynamic hard negatives (adore only).
    #[serde(default = "default_dynamic_k")]
    pub dynamic_k: usize,
    /// Metric whose swap delta weights lambda pairs (adore only).
    #[serde(default = "default_delta_metric")]
    pub delta_metric: Metric,
    /// Gain scheme backing the delta metric when it is ndcg.
    #[serde(default)]
    pub gain: GainScheme,
    /// Pool rebuild period in steps (static_refresh only).
    #[serde(default)]
    pub refresh_period: Option<u64>,
    #[serde(default)]
    pub seed: u64,
    /// Document index flavor for adore.
    #[serde(default)]
    pub index_kind: IndexKind,
    /// Steps between evaluation ticks.
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Clamp K for the top-K pairwise-error column of the log.
    #[serde(default = "default_eval_topk")]
    pub eval_topk: usize,
    /// Number of leading training queries profiled on each tick.
    #[serde(default = "default_eval_sample")]
    pub eval_sample: usize,
    /// How per-step negatives are picked out of a static pool.
    #[serde(default)]
    pub pool_selection: PoolSelection,
}

fn default_batch_size() -> usize {
    32
}
fn default_negs_per_query() -> usize {
    8
}
fn default_alpha() -> f64 {
    0.1
}
fn default_dynamic_k() -> usize {
    200
}
fn default_delta_metric() -> Metric {
    Metric::Mrr { k: 10 }
}
fn default_eval_every() -> u64 {
    100
}
fn default_eval_topk() -> usize {
    50
}
fn default_eval_sample() -> usize {
    32
}

impl TrainConfig {
    /// A minimal config: everything defaulted except the three essentials.
    pub fn new(strategy: Strategy, steps: u64, seed: u64) -> Self {
        TrainConfig {
            strategy,
            batch_size: default_batch_size(),
            negs_per_query: default_negs_per_query(),
            steps,
            lr: None,
            optimizer: OptimizerKind::default(),
            momentum: 0.0,
            alpha: default_alpha(),
            dynamic_k: default_dynamic_k(),
            delta_metric: default_delta_metric(),
            gain: GainScheme::default(),
            refresh_period: None,
            seed,
            index_kind: IndexKind::default(),
            eval_every: default_eval_every(),
            eval_topk: default_eval_topk(),
            eval_sample: default_eval_sample(),
            pool_selection: PoolSelection::default(),
        }
    }

    /// The effective constant learning rate.
    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.optimizer {
            OptimizerKind::Sgd => 0.05,
            OptimizerKind::Adam => 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 || self.eval_topk == 0 || self.eval_sample == 0 {
            return bad("eval_every, eval_topk, and eval_sample must be >= 1".into());
        }
        let lr = self.learning_rate();
        if !(lr.is_finite() && lr > 0.0) {
            return bad(format!("learning rate must be finite and positive, got {lr}"));
        }
        if !(self.momentum.is_finite() && self.momentum >= 0.0) {
            return bad(format!("momentum must be finite and >= 0, got {}", self.momentum));
        }
        match self.strategy {
            Strategy::Random | Strategy::StaticHard | Strategy::StaticRefresh | Strategy::Star
                if self.negs_per_query == 0 =>
            {
                return bad("negs_per_query must be >= 1".into());
            }
            Strategy::Star if !(self.alpha > 0.0 && self.alpha < 1.0) => {
                return bad(format!(
                    "alpha must lie strictly inside (0, 1), got {}",
                    self.alpha
                ));
            }
            Strategy::StaticRefresh if self.refresh_period.is_none_or(|r| r == 0) => {
                return bad("static_refresh needs refresh_period >= 1".into());
            }
            Strategy::Adore => {
                if self.dynamic_k == 0 {
                    return bad("dynamic_k must be >= 1".into());
                }
                if matches!(self.delta_metric, Metric::Recall { .. }) {
                    return bad(
                        "delta_metric must be a rank-sensitive metric (mrr@K or ndcg@K)".into(),
                    );
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Pre-built inputs a strategy may require before its first step.
#[derive(Clone, Copy, Default)]
pub struct TrainResources<'a> {
    /// Static hard-negative pool (static_hard, static_refresh, star).
    pub pool: Option<&'a NegativePool>,
    /// Parameters whose document tower encodes the frozen index (adore).
    pub doc_params: Option<&'a DualEncoderParams>,
}

/// The corpus-side context shared by every step.
#[derive(Clone, Copy)]
pub struct TrainInputs<'a> {
    pub corpus: &'a Corpus,
    pub train_queries: &'a [QueryRecord],
    /// Held-out queries scored for the `mrr10` log column.
    pub dev_queries: &'a [QueryRecord],
    pub qrels: &'a Qrels,
}

// ---------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------

/// Per-parameter accumulators: velocity for sgd, first/second moments
/// plus a bias-correction step counter for adam.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    kind: OptimizerKind,
    momentum: f64,
    steps_taken: u64,
    first: ParamGradient,
    second: ParamGradient,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, momentum: f64, params: &DualEncoderParams) -> Self {
        OptimizerState {
            kind,
            momentum,
            steps_taken: 0,
            first: ParamGradient::zeros_like(params),
            second: ParamGradient::zeros_like(params),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }
}

/// All parameter blocks of both towers, in serialization order.
fn param_blocks(params: &mut DualEncoderParams) -> Vec<&mut [f64]> {
    let DualEncoderParams { query, doc, .. } = params;
    query
        .blocks_mut()
        .into_iter()
        .chain(doc.blocks_mut())
        .map(|(_, block)| block)
        .collect()
}

fn grad_blocks(grad: &ParamGradient) -> Vec<&[f64]> {
    grad.query
        .blocks()
        .into_iter()
        .chain(grad.doc.blocks())
        .map(|(_, block)| block)
        .collect()
}

fn grad_blocks_mut(grad: &mut ParamGradient) -> Vec<&mut [f64]> {
    let ParamGradient { query, doc } = grad;
    query
        .blocks_mut()
        .into_iter()
        .chain(doc.blocks_mut())
        .map(|(_, block)| block)
        .collect()
}

/// Apply one optimizer update in place.
///
/// * sgd: `v ← g + momentum·v`, `p ← p − lr·v`
/// * adam: bias-corrected moment update with β₁ = 0.9, β₂ = 0.999,
///   ε = 1e-8.
///
/// A non-finite gradient entry aborts before anything is modified.
pub fn optimizer_step(
    params: &mut DualEncoderParams,
    grad: &ParamGradient,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if let Some((tower, block)) = grad.find_non_finite() {
        return Err(Error::NonFiniteGradient {
            tower,
            block,
            step: state.steps_taken + 1,
        });
    }
    state.steps_taken += 1;
    let p_blocks = param_blocks(params);
    let g_blocks = grad_blocks(grad);
    match state.kind {
        OptimizerKind::Sgd => {
            let momentum = state.momentum;
            for ((p, g), v) in p_blocks
                .into_iter()
                .zip(g_blocks)
                .zip(grad_blocks_mut(&mut state.first))
            {
                for i in 0..p.len() {
                    v[i] = g[i] + momentum * v[i];
                    p[i] -= lr * v[i];
                }
            }
        }
        OptimizerKind::Adam => {
            let t = state.steps_taken as i32;
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            let OptimizerState { first, second, .. } = state;
            for (((p, g), m), v) in p_blocks
                .into_iter()
                .zip(g_blocks)
                .zip(grad_blocks_mut(first))
                .zip(grad_blocks_mut(second))
            {
                for i in 0..p.len() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------
// Training log
// ---------------------------------------------------------------------

/// One log row. `loss` is absent only for the pre-training row at step 0;
/// the evaluation columns are present on eval ticks where they apply
/// (`phi`/`overlap` need a negative pool or a live retriever).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub step: u64,
    pub loss: Option<f64>,
    pub mrr10: Option<f64>,
    pub topk_errors: Option<f64>,
    pub phi: Option<f64>,
    pub overlap: Option<f64>,
}

const LOG_HEADER: &str = "step,loss,mrr10,topk_errors,phi,overlap";

/// The per-step training record, strictly increasing in `step`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    records: Vec<TickRecord>,
}

impl TrainLog {
    pub fn new() -> Self {
        TrainLog::default()
    }

    pub fn records(&self) -> &[TickRecord] {
        &self.records
    }

    fn push(&mut self, record: TickRecord) {
        assert!(
            self.records.last().is_none_or(|r| r.step < record.step),
            "log steps must increase"
        );
        self.records.push(record);
    }

    /// Rows that carry evaluation columns.
    pub fn ticks(&self) -> impl Iterator<Item = &TickRecord> {
        self.records.iter().filter(|r| r.mrr10.is_some() || r.topk_errors.is_some())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from(LOG_HEADER);
        out.push('\n');
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.step,
                cell(r.loss),
                cell(r.mrr10),
                cell(r.topk_errors),
                cell(r.phi),
                cell(r.overlap)
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == LOG_HEADER => {}
            _ => {
                return Err(Error::format(
                    path,
                    format!("expected header {LOG_HEADER:?}"),
                ))
            }
        }
        let mut log = TrainLog::new();
        for (line_no, line) in lines {
            let line_no = line_no + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::parse(path, line_no, "expected 6 columns"));
            }
            let step: u64 = fields[0]
                .parse()
                .map_err(|_| Error::parse(path, line_no, "bad step number"))?;
            let opt = |idx: usize| -> Result<Option<f64>> {
                if fields[idx].is_empty() {
                    Ok(None)
                } else {
                    fields[idx]
                        .parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::parse(path, line_no, "bad float field"))
                }
            };
            let record = TickRecord {
                step,
                loss: opt(1)?,
                mrr10: opt(2)?,
                topk_errors: opt(3)?,
                phi: opt(4)?,
                overlap: opt(5)?,
            };
            if log.records.last().is_some_and(|r| r.step >= record.step) {
                return Err(Error::parse(path, line_no, "step numbers must increase"));
            }
            log.records.push(record);
        }
        Ok(log)
    }
}

// ---------------------------------------------------------------------
// The step plan: one batch reduced to weighted RankNet pairs
// ---------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum TowerMode {
    /// Gradients flow into both towers; documents embedded on the fly.
    Both,
    /// Query tower only; document vectors come from the frozen index.
    QueryOnly,
}

#[derive(Clone, Debug)]
struct PlannedPair {
    positive: DocId,
    negative: DocId,
    /// Constant loss weight: 1, the stabilizer α, or the metric delta.
    coeff: f64,
}

#[derive(Clone, Debug)]
struct PlanRow {
    fv: FeatureVector,
    pairs: Vec<PlannedPair>,
}

#[derive(Clone, Debug)]
struct StepPlan {
    rows: Vec<PlanRow>,
    mode: TowerMode,
    /// Loss and gradient normalizer, `1 / batch_size`.
    scale: f64,
}

/// Per-query, per-step, per-purpose random stream.
fn row_rng(seed: u64, purpose: &[u8], qid: &str, step: u64) -> rand_chacha::ChaCha8Rng {
    stream_rng(seed, &[fnv1a_64(purpose), fnv1a_64(qid.as_bytes()), step])
}

fn pick_positive(qid: &str, rel: &QueryRelevance, seed: u64, step: u64) -> DocId {
    let positives = rel.positives();
    if positives.len() == 1 {
        return positives[0];
    }
    let mut rng = row_rng(seed, b"positive-pick", qid, step);
    positives[rng.random_range(0..positives.len())]
}

/// Draw each row's query, positive, and strategy-specific hard negatives.
fn assemble_batch(
    ctx: &LoopCtx<'_>,
    batch_ids: &[usize],
    pool: Option<&NegativePool>,
    step: u64,
) -> Result<Vec<BatchRow>> {
    let cfg = ctx.cfg;
    let n_docs = ctx.inputs.corpus.len();
    batch_ids
        .iter()
        .map(|&qi| {
            let qid = &ctx.inputs.train_queries[qi].qid;
            let rel = &ctx.rels[qi];
            let positive = pick_positive(qid, rel, cfg.seed, step);
            let hard_negatives = match cfg.strategy {
                Strategy::Random => sample_random_negatives(
                    qid,
                    cfg.negs_per_query,
                    rel,
                    n_docs,
                    &mut row_rng(cfg.seed, b"random-negatives", qid, step),
                )?,
                Strategy::InBatch | Strategy::Adore => Vec::new(),
                Strategy::StaticHard | Strategy::StaticRefresh | Strategy::Star => {
                    let list = pool
                        .and_then(|p| p.negatives(qid))
                        .expect("pool coverage checked before training");
                    sample_from_pool(
                        list,
                        cfg.negs_per_query,
                        cfg.pool_selection,
                        &mut row_rng(cfg.seed, b"pool-pick", qid, step),
                    )
                }
            };
            Ok(BatchRow {
                qid: qid.clone(),
                positive,
                hard_negatives,
            })
        })
        .collect()
}

/// Turn an assembled batch into weighted pairs.
fn build_step_plan(
    params: &DualEncoderParams,
    ctx: &LoopCtx<'_>,
    batch_ids: &[usize],
    batch: &[BatchRow],
) -> Result<StepPlan> {
    let cfg = ctx.cfg;
    let scale = 1.0 / batch.len() as f64;
    if cfg.strategy == Strategy::Adore {
        let index = ctx.doc_index.expect("adore index built before training");
        let rows: Vec<PlanRow> = batch_ids
            .par_iter()
            .zip(batch)
            .map(|(&qi, row)| -> Result<PlanRow> {
                let rel = &ctx.rels[qi];
                let query = &ctx.inputs.train_queries[qi];
                let fv = hash_features(&query.tokens, params.hash_dim)?;
                let q_emb = params.embed_query(&fv)?;
                let (negatives, hits) =
                    dynamic_hard_with_hits(index, &q_emb, cfg.dynamic_k, rel)?;
                // The swap-delta candidate list: everything retrieved plus
                // any positives the retriever missed, at live scores.
                let mut candidates = hits;
                for &pos in rel.positives() {
                    if !candidates.iter().any(|&(id, _)| id == pos) {
                        candidates.push((pos, index.score_one(&q_emb, pos)?));
                    }
                }
                let list = RankedList::from_unsorted(candidates)?;
                let pairs = negatives
                    .iter()
                    .map(|&neg| -> Result<PlannedPair> {
                        let coeff = delta_metric(
                            &list,
                            row.positive,
                            neg,
                            cfg.delta_metric,
                            rel,
                            cfg.gain,
                        )?;
                        Ok(PlannedPair {
                            positive: row.positive,
                            negative: neg,
                            coeff,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(PlanRow { fv, pairs })
            })
            .collect::<Result<_>>()?;
        return Ok(StepPlan {
            rows,
            mode: TowerMode::QueryOnly,
            scale,
        });
    }

    let mut rows = Vec::with_capacity(batch.len());
    for (i, (&qi, row)) in batch_ids.iter().zip(batch).enumerate() {
        let rel = &ctx.rels[qi];
        let query = &ctx.inputs.train_queries[qi];
        let fv = hash_features(&query.tokens, params.hash_dim)?;
        let mut pairs: Vec<PlannedPair> = row
            .hard_negatives
            .iter()
            .map(|&neg| PlannedPair {
                positive: row.positive,
                negative: neg,
                coeff: 1.0,
            })
            .collect();
        match cfg.strategy {
            Strategy::InBatch | Strategy::Star => {
                let coeff = if cfg.strategy == Strategy::Star {
                    cfg.alpha
                } else {
                    1.0
                };
                for neg in in_batch_negatives(batch, i, rel) {
                    pairs.push(PlannedPair {
                        positive: row.positive,
                        negative: neg,
                        coeff,
                    });
                }
            }
            _ => {}
        }
        rows.push(PlanRow { fv, pairs });
    }
    Ok(StepPlan {
        rows,
        mode: TowerMode::Both,
        scale,
    })
}

/// Evaluate a plan's loss and its analytic gradient at `params`.
///
/// Pair coefficients and (for the query-only mode) document vectors are
/// constants baked into the plan, so this function is a pure, twice-
/// evaluable objective in `params` — which is exactly what the optimizer
/// and the finite-difference checks need.
fn loss_and_grad(
    params: &DualEncoderParams,
    plan: &StepPlan,
    corpus: &Corpus,
    doc_index: Option<&Index>,
) -> Result<(f64, ParamGradient)> {
    let mut grad = ParamGradient::zeros_like(params);
    let mut loss = 0.0;

    // Embed (or fetch) each distinct document once.
    let mut doc_vecs: BTreeMap<DocId, Vec<f64>> = BTreeMap::new();
    let mut doc_fvs: BTreeMap<DocId, FeatureVector> = BTreeMap::new();
    for row in &plan.rows {
        for pair in &row.pairs {
            for id in [pair.positive, pair.negative] {
                if doc_vecs.contains_key(&id) {
                    continue;
                }
                let vec = match plan.mode {
                    TowerMode::Both => {
                        let fv = hash_features(&corpus.doc(id).tokens, params.hash_dim)?;
                        let emb = params.embed_doc(&fv)?;
                        doc_fvs.insert(id, fv);
                        emb
                    }
                    TowerMode::QueryOnly => doc_index
                        .expect("query-only plans carry a document index")
                        .doc_vector(id),
                };
                doc_vecs.insert(id, vec);
            }
        }
    }

    let mut doc_emb_grads: BTreeMap<DocId, Vec<f64>> = BTreeMap::new();
    for row in &plan.rows {
        if row.pairs.is_empty() {
            continue;
        }
        let q_emb = params.embed_query(&row.fv)?;
        let mut dq = vec![0.0; params.d_emb];
        for pair in &row.pairs {
            let d_pos = &doc_vecs[&pair.positive];
            let d_neg = &doc_vecs[&pair.negative];
            let g = ranknet_loss(dot(&q_emb, d_pos), dot(&q_emb, d_neg));
            let c = pair.coeff * plan.scale;
            loss += c * g.loss;
            for j in 0..dq.len() {
                dq[j] += c * (g.d_s_pos * d_pos[j] + g.d_s_neg * d_neg[j]);
            }
            if plan.mode == TowerMode::Both {
                for (id, ds) in [(pair.positive, g.d_s_pos), (pair.negative, g.d_s_neg)] {
                    let slot = doc_emb_grads
                        .entry(id)
                        .or_insert_with(|| vec![0.0; params.d_emb]);
                    for j in 0..slot.len() {
                        slot[j] += c * ds * q_emb[j];
                    }
                }
            }
        }
        backprop(params, &row.fv, TowerKind::Query, &dq, &mut grad)?;
    }
    for (id, d_emb_grad) in &doc_emb_grads {
        backprop(params, &doc_fvs[id], TowerKind::Doc, d_emb_grad, &mut grad)?;
    }
    Ok((loss, grad))
}

// ---------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------

/// Shuffles the trainable queries once per epoch and deals them out in
/// fixed-size batches (batches may straddle epoch boundaries).
struct EpochScheduler {
    ids: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl EpochScheduler {
    fn new(ids: Vec<usize>, seed: u64) -> Self {
        let order = Self::shuffled(&ids, seed, 0);
        EpochScheduler {
            ids,
            order,
            cursor: 0,
            epoch: 0,
            seed,
        }
    }

    fn shuffled(ids: &[usize], seed: u64, epoch: u64) -> Vec<usize> {
        let mut order = ids.to_vec();
        order.shuffle(&mut stream_rng(seed, &[fnv1a_64(b"epoch-shuffle"), epoch]));
        order
    }

    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            if self.cursor == self.order.len() {
                self.epoch += 1;
                self.order = Self::shuffled(&self.ids, self.seed, self.epoch);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

struct LoopCtx<'a> {
    inputs: TrainInputs<'a>,
    cfg: &'a TrainConfig,
    rels: &'a [QueryRelevance],
    eval_ids: &'a [usize],
    eval_queries: &'a [QueryRecord],
    doc_index: Option<&'a Index>,
}

/// Compute one eval tick: dev MRR@10, clamped pairwise errors over the
/// profiled sample, and — where a pool or live retriever exists — the
/// mean negative-set quality φ and static/dynamic overlap.
fn eval_tick(
    ctx: &LoopCtx<'_>,
    step: u64,
    loss: Option<f64>,
    params: &DualEncoderParams,
    pool: Option<&NegativePool>,
) -> Result<TickRecord> {
    let inputs = ctx.inputs;
    let owned_index;
    let index: &Index = match ctx.doc_index {
        Some(ix) => ix,
        None => {
            owned_index = Index::Exact(ExactIndex::from_params(inputs.corpus, params)?);
            &owned_index
        }
    };

    let quality = index_quality(index, params, inputs.dev_queries, inputs.qrels, inputs.corpus)?;
    let mrr10 = (quality.evaluated > 0).then_some(quality.mean_mrr10);

    let profiles = rank_profiles(index, params, ctx.eval_queries, inputs.qrels, inputs.corpus)?;
    let topk_errors =
        (!profiles.is_empty()).then(|| topk_pairwise_errors(&profiles, ctx.cfg.eval_topk));

    let mut phis: Vec<f64> = Vec::new();
    let mut overlaps: Vec<f64> = Vec::new();
    for &qi in ctx.eval_ids {
        let rel = &ctx.rels[qi];
        let query = &inputs.train_queries[qi];
        let fv = hash_features(&query.tokens, params.hash_dim)?;
        let q_emb = params.embed_query(&fv)?;
        let pool_list = pool
            .and_then(|p| p.negatives(&query.qid))
            .filter(|l| !l.is_empty());

        // φ of the strategy's live negative source.
        let phi_set: Option<Vec<DocId>> = if ctx.cfg.strategy == Strategy::Adore {
            let (negs, _) = dynamic_hard_with_hits(index, &q_emb, ctx.cfg.dynamic_k, rel)?;
            (!negs.is_empty()).then_some(negs)
        } else {
            pool_list.map(<[DocId]>::to_vec)
        };
        if let Some(set) = phi_set {
            let ranking = index.search(&q_emb, index.len())?;
            phis.push(quality_phi(&set, &ranking)? as f64);
        }

        // Overlap between the static pool and the current dynamic set.
        if let Some(list) = pool_list {
            let (dynamic, _) = dynamic_hard_with_hits(index, &q_emb, list.len(), rel)?;
            overlaps.push(overlap_ratio(list, &dynamic)?);
        }
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);

    Ok(TickRecord {
        step,
        loss,
        mrr10,
        topk_errors,
        phi: mean(&phis),
        overlap: mean(&overlaps),
    })
}

fn build_doc_index(corpus: &Corpus, doc_params: &DualEncoderParams, cfg: &TrainConfig) -> Result<Index> {
    let exact = ExactIndex::from_params(corpus, doc_params)?;
    match cfg.index_kind {
        IndexKind::Exact => Ok(Index::Exact(exact)),
        IndexKind::Pq { m, k_c } => {
            let (codebook, _) = train_pq(&exact, m, k_c, PQ_TRAIN_ITERS, cfg.seed)?;
            Ok(Index::Pq(PqIndex::encode_index(&exact, codebook)?))
        }
    }
}

/// Run one training job and return the final parameters plus the log.
///
/// The log gets a row per step (step 0 records the untrained model), with
/// evaluation columns filled every `eval_every` steps and on the final
/// step; `eval_hook` fires on exactly those rows with the frozen
/// parameters of the moment. Identical inputs, config, and seed
/// reproduce both outputs bit for bit.
pub fn train(
    inputs: TrainInputs<'_>,
    init: DualEncoderParams,
    resources: TrainResources<'_>,
    cfg: &TrainConfig,
    mut eval_hook: impl FnMut(&TickRecord, &DualEncoderParams) -> Result<()>,
) -> Result<(DualEncoderParams, TrainLog)> {
    cfg.validate()?;

    // Strategy prerequisites, checked before any step runs.
    let mut pool: Option<NegativePool> = resources.pool.cloned();
    if cfg.strategy.needs_pool() && pool.is_none() {
        return Err(Error::MissingPrerequisite {
            strategy: cfg.strategy.name(),
            what: "a pre-retrieved static negative pool",
        });
    }
    let doc_index: Option<Index> = if cfg.strategy == Strategy::Adore {
        let doc_params = resources.doc_params.ok_or(Error::MissingPrerequisite {
            strategy: "adore",
            what: "frozen document-tower parameters (a warm-up checkpoint)",
        })?;
        Some(build_doc_index(inputs.corpus, doc_params, cfg)?)
    } else {
        None
    };

    let rels: Vec<QueryRelevance> = inputs
        .train_queries
        .iter()
        .map(|q| QueryRelevance::build(inputs.qrels, inputs.corpus, &q.qid))
        .collect();
    let trainable: Vec<usize> = (0..inputs.train_queries.len())
        .filter(|&i| rels[i].has_judgments())
        .collect();
    if trainable.is_empty() {
        return Err(Error::EmptyInput("no training queries with judged documents"));
    }
    if let Some(pool) = &pool {
        for &i in &trainable {
            let qid = &inputs.train_queries[i].qid;
            if pool.negatives(qid).is_none() {
                return Err(Error::InvalidConfig(format!(
                    "negative pool has no entry for training query {qid}"
                )));
            }
        }
    }

    let eval_ids: Vec<usize> = trainable.iter().copied().take(cfg.eval_sample).collect();
    let eval_queries: Vec<QueryRecord> = eval_ids
        .iter()
        .map(|&i| inputs.train_queries[i].clone())
        .collect();
    let ctx = LoopCtx {
        inputs,
        cfg,
        rels: &rels,
        eval_ids: &eval_ids,
        eval_queries: &eval_queries,
        doc_index: doc_index.as_ref(),
    };

    let mut params = init;
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.momentum, &params);
    let lr = cfg.learning_rate();
    let mut log = TrainLog::new();
    let mut scheduler = EpochScheduler::new(trainable, cfg.seed);

    let first = eval_tick(&ctx, 0, None, &params, pool.as_ref())?;
    eval_hook(&first, &params)?;
    log.push(first);

    for step in 1..=cfg.steps {
        if cfg.strategy == Strategy::StaticRefresh && step % cfg.refresh_period.unwrap() == 0 {
            let current = pool.as_ref().expect("refresh strategy always has a pool");
            pool = Some(
                refresh_static(
                    current,
                    &params,
                    inputs.corpus,
                    inputs.train_queries,
                    inputs.qrels,
                    step,
                    cfg.refresh_period,
                )?
                .into_owned(),
            );
        }

        let batch_ids = scheduler.next_batch(cfg.batch_size);
        let batch = assemble_batch(&ctx, &batch_ids, pool.as_ref(), step)?;
        let plan = build_step_plan(&params, &ctx, &batch_ids, &batch)?;
        let (loss, grad) = loss_and_grad(&params, &plan, inputs.corpus, ctx.doc_index)?;
        optimizer_step(&mut params, &grad, &mut opt, lr)?;

        let is_tick = step % cfg.eval_every == 0 || step == cfg.steps;
        let record = if is_tick {
            let r = eval_tick(&ctx, step, Some(loss), &params, pool.as_ref())?;
            eval_hook(&r, &params)?;
            r
        } else {
            TickRecord {
                step,
                loss: Some(loss),
                mrr10: None,
                topk_errors: None,
                phi: None,
                overlap: None,
            }
        };
        log.push(record);
    }
    Ok((params, log))
}

/// Produce a warm-up model: a short static-hard run against a
/// pre-retrieved (typically lexical) pool. The result initializes the
/// stabilized strategies and serves as the frozen document encoder for
/// retrieval-in-the-loop training.
pub fn warmup_model(
    inputs: TrainInputs<'_>,
    init: DualEncoderParams,
    pool: &NegativePool,
    cfg: &TrainConfig,
) -> Result<DualEncoderParams> {
    let mut warm_cfg = cfg.clone();
    warm_cfg.strategy = Strategy::StaticHard;
    let resources = TrainResources {
        pool: Some(pool),
        doc_params: None,
    };
    let (params, _) = train(inputs, init, resources, &warm_cfg, |_, _| Ok(()))?;
    Ok(params)
}
