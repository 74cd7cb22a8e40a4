//! Ranking metrics and retrieval diagnostics.
//!
//! Two layers live here. The metric layer is classical IR measurement:
//! MRR@k, Recall@k, NDCG@k over a ranked list plus judged relevance. The
//! diagnostic layer looks *inside* a ranking the way the trainer does:
//!
//! * [`RankProfile`] — for every relevant document of a query, its
//!   full-corpus rank `π` and the number of relevant documents ranked
//!   before it, `δ`. The quantity `π − δ − 1` is exactly the number of
//!   irrelevant documents beating it — the query's pairwise errors.
//! * [`total_pairwise_errors`] / [`topk_pairwise_errors`] — the mean
//!   per-query error mass, unclamped or clamped at `K` (the objective a
//!   top-K hard-negative sampler actually minimizes).
//! * [`error_distribution`] — how that error mass concentrates on a few
//!   hard queries (share of queries vs. share of errors per bucket).
//! * [`quality_phi`] — the best full-corpus rank inside a negative set:
//!   how hard the hardest chosen negative really is.
//! * [`overlap_ratio`] — agreement between a frozen negative pool and the
//!   current model's dynamic hard negatives.
//! * [`theorem1_point`] — checks the condition `π − δ − 1 ≤ K` for every
//!   relevant document; when it holds on all queries the clamped and
//!   unclamped objectives coincide exactly, so optimizing one optimizes
//!   the other.
//!
//! Rank arithmetic uses the canonical comparator everywhere (score
//! descending, ties by ascending id), which makes every identity in the
//! tests exact rather than approximate.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{hash_features, Corpus, DocId, Qrels, QueryRecord, QueryRelevance};
use crate::encoder::DualEncoderParams;
use crate::error::{Error, Result};
use crate::index::{rank_order, Index};

/// How graded judgments convert to NDCG gains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainScheme {
    /// `2^grade − 1`: strongly rewards highly-relevant documents.
    #[default]
    Exponential,
    /// `grade` itself.
    Linear,
}

impl GainScheme {
    fn gain(self, grade: u32) -> f64 {
        match self {
            GainScheme::Exponential => 2f64.powi(grade as i32) - 1.0,
            GainScheme::Linear => f64::from(grade),
        }
    }
}

/// A truncated ranking metric, e.g. `mrr@10`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Mrr { k: usize },
    Recall { k: usize },
    Ndcg { k: usize },
}

impl Metric {
    pub fn cutoff(self) -> usize {
        match self {
            Metric::Mrr { k } | Metric::Recall { k } | Metric::Ndcg { k } => k,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Mrr { k } => write!(f, "mrr@{k}"),
            Metric::Recall { k } => write!(f, "r@{k}"),
            Metric::Ndcg { k } => write!(f, "ndcg@{k}"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Metric {
    type Err = Error;

    /// Parse `name@k` with `name ∈ {mrr, ndcg, r}` (`recall` is accepted
    /// as an alias for `r`) and `k ≥ 1`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownMetric {
            name: s.to_string(),
        };
        let (name, k) = s.split_once('@').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        if k == 0 {
            return Err(bad());
        }
        match name {
            "mrr" => Ok(Metric::Mrr { k }),
            "r" | "recall" => Ok(Metric::Recall { k }),
            "ndcg" => Ok(Metric::Ndcg { k }),
            _ => Err(bad()),
        }
    }
}

/// Reciprocal rank of the first relevant document in the top `k`, else 0.
pub fn mrr_at_k(ranked: &[DocId], rel: &QueryRelevance, k: usize) -> f64 {
    ranked
        .iter()
        .take(k)
        .position(|&id| rel.is_relevant(id))
        .map_or(0.0, |pos| 1.0 / (pos + 1) as f64)
}

/// Fraction of the query's relevant documents present in the top `k`.
pub fn recall_at_k(ranked: &[DocId], rel: &QueryRelevance, k: usize) -> f64 {
    let total = rel.positives().len();
    if total == 0 {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|&&id| rel.is_relevant(id)).count();
    hits as f64 / total as f64
}

/// NDCG@k: discounted cumulative gain over the top `k`, normalized by the
/// ideal ordering of *all* judged documents truncated at `k`. Rank `r`
/// (1-based) is discounted by `1 / log2(r + 1)`. Queries whose judgments
/// carry no positive gain score 0.
pub fn ndcg_at_k(ranked: &[DocId], rel: &QueryRelevance, k: usize, gain: GainScheme) -> f64 {
    let discount = |rank1: usize| 1.0 / ((rank1 + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, &id)| gain.gain(rel.grade(id)) * discount(pos + 1))
        .sum();
    let mut ideal: Vec<f64> = rel.graded().iter().map(|&(_, g)| gain.gain(g)).collect();
    ideal.sort_unstable_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(pos, g)| g * discount(pos + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

/// Evaluate one metric over a ranked id list.
pub fn metric_over_list(
    metric: Metric,
    ranked: &[DocId],
    rel: &QueryRelevance,
    gain: GainScheme,
) -> f64 {
    match metric {
        Metric::Mrr { k } => mrr_at_k(ranked, rel, k),
        Metric::Recall { k } => recall_at_k(ranked, rel, k),
        Metric::Ndcg { k } => ndcg_at_k(ranked, rel, k, gain),
    }
}

/// One relevant document's position in the full ranking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankProfileEntry {
    pub positive: DocId,
    /// 1-based full-corpus rank π.
    pub rank: usize,
    /// Number of *relevant* documents ranked before it (δ).
    pub preceding_relevant: usize,
}

impl RankProfileEntry {
    /// Irrelevant documents ranked above this positive: `π − δ − 1`.
    pub fn pairwise_errors(&self) -> usize {
        self.rank - self.preceding_relevant - 1
    }
}

/// Rank positions of every relevant document of one query, in rank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    pub qid: String,
    pub entries: Vec<RankProfileEntry>,
}

impl RankProfile {
    /// Sum of `π − δ − 1` over this query's relevant documents.
    pub fn total_errors(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.pairwise_errors() as f64)
            .sum()
    }

    /// Sum of `min(π − δ − 1, k)`.
    pub fn topk_errors(&self, k: usize) -> f64 {
        self.entries
            .iter()
            .map(|e| e.pairwise_errors().min(k) as f64)
            .sum()
    }
}

/// Profile a query by ranking the entire collection through the index.
///
/// Defined via a full-depth search; [`rank_profile_from_scores`] computes
/// the same result from a raw score vector without sorting.
pub fn rank_profile(
    index: &Index,
    q_emb: &[f64],
    rel: &QueryRelevance,
    qid: &str,
) -> Result<RankProfile> {
    if !rel.has_judgments() {
        return Err(Error::Unjudged(qid.to_string()));
    }
    let ranking = index.search(q_emb, index.len())?;
    let mut entries = Vec::with_capacity(rel.positives().len());
    let mut seen_relevant = 0usize;
    for (pos, &(id, _)) in ranking.iter().enumerate() {
        if rel.is_relevant(id) {
            entries.push(RankProfileEntry {
                positive: id,
                rank: pos + 1,
                preceding_relevant: seen_relevant,
            });
            seen_relevant += 1;
        }
    }
    Ok(RankProfile {
        qid: qid.to_string(),
        entries,
    })
}

/// Profile a query from a full score vector (index order) by counting,
/// in O(|C| · |D⁺|), without materializing the sorted ranking.
pub fn rank_profile_from_scores(
    scores: &[f64],
    rel: &QueryRelevance,
    qid: &str,
) -> Result<RankProfile> {
    if !rel.has_judgments() {
        return Err(Error::Unjudged(qid.to_string()));
    }
    let mut entries = Vec::with_capacity(rel.positives().len());
    for &p in rel.positives() {
        if p.index() >= scores.len() {
            return Err(Error::UnknownDocument(format!(
                "{p} (beyond the score vector)"
            )));
        }
        let me = (p, scores[p.index()]);
        let mut before = 0usize;
        let mut relevant_before = 0usize;
        for (i, &s) in scores.iter().enumerate() {
            let other = (DocId(i as u32), s);
            if rank_order(&other, &me) == std::cmp::Ordering::Less {
                before += 1;
                if rel.is_relevant(other.0) {
                    relevant_before += 1;
                }
            }
        }
        entries.push(RankProfileEntry {
            positive: p,
            rank: before + 1,
            preceding_relevant: relevant_before,
        });
    }
    entries.sort_unstable_by_key(|e| e.rank);
    Ok(RankProfile {
        qid: qid.to_string(),
        entries,
    })
}

/// Profile every judged query of a batch against an index (parallel over
/// queries, deterministic order). Queries with no judged documents in the
/// corpus are silently skipped.
pub fn rank_profiles(
    index: &Index,
    params: &DualEncoderParams,
    queries: &[QueryRecord],
    qrels: &Qrels,
    corpus: &Corpus,
) -> Result<Vec<RankProfile>> {
    let maybe: Vec<Option<Result<RankProfile>>> = queries
        .par_iter()
        .map(|query| {
            let rel = QueryRelevance::build(qrels, corpus, &query.qid);
            if !rel.has_judgments() {
                return None;
            }
            let profile = (|| {
                let fv = hash_features(&query.tokens, params.hash_dim)?;
                let q_emb = params.embed_query(&fv)?;
                let scores = index.scores(&q_emb)?;
                rank_profile_from_scores(&scores, &rel, &query.qid)
            })();
            Some(profile)
        })
        .collect();
    maybe.into_iter().flatten().collect()
}

/// Mean per-query pairwise errors: `Σ (π − δ − 1)` averaged over queries.
/// An empty profile set reports 0.
pub fn total_pairwise_errors(profiles: &[RankProfile]) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    profiles.iter().map(RankProfile::total_errors).sum::<f64>() / profiles.len() as f64
}

/// Mean per-query clamped errors: `Σ min(π − δ − 1, k)` averaged over
/// queries. Every query's contribution is bounded by `k · |D⁺|`.
pub fn topk_pairwise_errors(profiles: &[RankProfile], k: usize) -> f64 {
    assert!(k >= 1, "error clamp k must be >= 1");
    if profiles.is_empty() {
        return 0.0;
    }
    profiles
        .iter()
        .map(|p| p.topk_errors(k))
        .sum::<f64>()
        / profiles.len() as f64
}

/// Best (minimum) 1-based rank of any member of a document set within a
/// full ranking. Errors on an empty set or a member missing from the
/// ranking.
pub fn quality_phi(set: &[DocId], ranking: &[(DocId, f64)]) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::EmptyInput("negative set for phi"));
    }
    let members: BTreeSet<DocId> = set.iter().copied().collect();
    ranking
        .iter()
        .position(|(id, _)| members.contains(id))
        .map(|pos| pos + 1)
        .ok_or_else(|| Error::UnknownDocument("no set member appears in the ranking".into()))
}

/// [`quality_phi`] computed directly from a full score vector: find the
/// comparator-best member, then count the documents ranked before it.
pub fn quality_phi_from_scores(set: &[DocId], scores: &[f64]) -> Result<usize> {
    if set.is_empty() {
        return Err(Error::EmptyInput("negative set for phi"));
    }
    let mut best: Option<(DocId, f64)> = None;
    for &id in set {
        if id.index() >= scores.len() {
            return Err(Error::UnknownDocument(format!(
                "{id} (beyond the score vector)"
            )));
        }
        let entry = (id, scores[id.index()]);
        if best.is_none_or(|b| rank_order(&entry, &b) == std::cmp::Ordering::Less) {
            best = Some(entry);
        }
    }
    let best = best.expect("set is non-empty");
    let before = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| rank_order(&(DocId(i as u32), s), &best) == std::cmp::Ordering::Less)
        .count();
    Ok(before + 1)
}

/// `|static ∩ dynamic| / |static|` — how much of a frozen negative pool
/// the current dynamic hard negatives still cover.
pub fn overlap_ratio(static_set: &[DocId], dynamic_set: &[DocId]) -> Result<f64> {
    let statics: BTreeSet<DocId> = static_set.iter().copied().collect();
    if statics.is_empty() {
        return Err(Error::EmptyInput("static set for overlap"));
    }
    let dynamics: BTreeSet<DocId> = dynamic_set.iter().copied().collect();
    Ok(statics.intersection(&dynamics).count() as f64 / statics.len() as f64)
}

/// One histogram bucket of the per-query error distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucket {
    /// Inclusive lower edge.
    pub lo: f64,
    /// Exclusive upper edge; `None` marks the unbounded last bucket (kept
    /// out of the float so the struct stays JSON-representable).
    pub hi: Option<f64>,
    /// Fraction of queries whose total errors fall in `[lo, hi)`.
    pub query_share: f64,
    /// This bucket's fraction of the total error mass.
    pub error_share: f64,
}

/// Default log-spaced bucket edges: buckets `[0,1), [1,10), … [10⁴, ∞)`.
pub fn default_error_buckets() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1000.0, 10000.0]
}

/// Histogram of per-query error mass over buckets defined by strictly
/// increasing upper edges (a final `[last, ∞)` bucket is implied). With a
/// non-empty profile set the query shares sum to 1, and so do the error
/// shares whenever any errors exist at all.
pub fn error_distribution(profiles: &[RankProfile], upper_edges: &[f64]) -> Result<Vec<ErrorBucket>> {
    if upper_edges.is_empty() {
        return Err(Error::EmptyInput("error histogram edges"));
    }
    if upper_edges
        .windows(2)
        .any(|w| w[0] >= w[1])
        || upper_edges.iter().any(|&e| !e.is_finite() || e <= 0.0)
    {
        return Err(Error::InvalidConfig(
            "error histogram edges must be positive, finite, strictly increasing".into(),
        ));
    }
    let mut edges = vec![0.0];
    edges.extend_from_slice(upper_edges);
    edges.push(f64::INFINITY);

    let mut query_counts = vec![0usize; edges.len() - 1];
    let mut error_mass = vec![0.0f64; edges.len() - 1];
    for profile in profiles {
        let e = profile.total_errors();
        let bucket = edges.windows(2).position(|w| e >= w[0] && e < w[1]).expect(
            "edges cover [0, inf)",
        );
        query_counts[bucket] += 1;
        error_mass[bucket] += e;
    }
    let n_queries = profiles.len() as f64;
    let total_errors: f64 = error_mass.iter().sum();
    Ok(edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| ErrorBucket {
            lo: w[0],
            hi: w[1].is_finite().then_some(w[1]),
            query_share: if n_queries > 0.0 {
                query_counts[i] as f64 / n_queries
            } else {
                0.0
            },
            error_share: if total_errors > 0.0 {
                error_mass[i] / total_errors
            } else {
                0.0
            },
        })
        .collect())
}

/// Clamped vs. unclamped objective at one parameter point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Point {
    /// True iff every relevant document satisfies `π − δ − 1 ≤ k`.
    pub condition_holds: bool,
    /// Mean per-query unclamped errors (the random-negative objective).
    pub objective_random: f64,
    /// Mean per-query clamped errors (the top-k hard-negative objective).
    pub objective_topk: f64,
}

/// Compare the two objectives on a fixed set of profiles. When the
/// condition holds, the clamp in the top-k objective is inactive on every
/// document, so the two objectives are *identical* — not just close.
pub fn theorem1_point(profiles: &[RankProfile], k: usize) -> Theorem1Point {
    let condition_holds = profiles
        .iter()
        .flat_map(|p| p.entries.iter())
        .all(|e| e.pairwise_errors() <= k);
    Theorem1Point {
        condition_holds,
        objective_random: total_pairwise_errors(profiles),
        objective_topk: topk_pairwise_errors(profiles, k),
    }
}

/// Evaluate [`theorem1_point`] for a parameter setting by building the
/// exact index it induces and profiling the given queries.
pub fn theorem1_audit(
    params: &DualEncoderParams,
    corpus: &Corpus,
    queries: &[QueryRecord],
    qrels: &Qrels,
    k: usize,
) -> Result<Theorem1Point> {
    let index = Index::Exact(crate::index::ExactIndex::from_params(corpus, params)?);
    let profiles = rank_profiles(&index, params, queries, qrels, corpus)?;
    Ok(theorem1_point(&profiles, k))
}

/// A sweep of both objectives along a one-parameter family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Sweep {
    pub ts: Vec<f64>,
    pub points: Vec<Theorem1Point>,
    /// Index of the unclamped objective's minimizer (ties → lowest index).
    pub argmin_random: usize,
    /// Index of the clamped objective's minimizer (ties → lowest index).
    pub argmin_topk: usize,
    pub condition_holds_everywhere: bool,
}

/// Evaluate both objectives at each `t` of a one-parameter family. When
/// the condition holds everywhere, the two objectives agree pointwise and
/// therefore share their argmin.
pub fn theorem1_sweep(
    ts: &[f64],
    mut eval_point: impl FnMut(f64) -> Result<Theorem1Point>,
) -> Result<Theorem1Sweep> {
    if ts.is_empty() {
        return Err(Error::EmptyInput("sweep points"));
    }
    let points: Vec<Theorem1Point> = ts.iter().map(|&t| eval_point(t)).collect::<Result<_>>()?;
    let argmin = |f: &dyn Fn(&Theorem1Point) -> f64| -> usize {
        let mut best = 0usize;
        for (i, p) in points.iter().enumerate().skip(1) {
            if f(p) < f(&points[best]) {
                best = i;
            }
        }
        best
    };
    Ok(Theorem1Sweep {
        ts: ts.to_vec(),
        argmin_random: argmin(&|p| p.objective_random),
        argmin_topk: argmin(&|p| p.objective_topk),
        condition_holds_everywhere: points.iter().all(|p| p.condition_holds),
        points,
    })
}

/// Per-query metric values, aligned with [`MetricsReport::metrics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub qid: String,
    pub values: Vec<f64>,
}

/// Error diagnostics attached to a [`MetricsReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean_total_errors: f64,
    pub mean_topk_errors: f64,
    pub topk_cutoff: usize,
    pub buckets: Vec<ErrorBucket>,
}

/// Evaluation results: metric means, per-query values, and (optionally)
/// the pairwise-error diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Metric names, e.g. `["mrr@10", "recall@100"]`.
    pub metrics: Vec<String>,
    /// Mean of each metric over the evaluated queries.
    pub means: Vec<f64>,
    pub evaluated: usize,
    /// Queries skipped for lack of judged documents in the corpus.
    pub skipped: usize,
    pub per_query: Vec<QueryMetrics>,
    pub errors: Option<ErrorSummary>,
}

impl MetricsReport {
    /// Pretty-printed JSON (stable field and row order).
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Summary CSV: one `metric,mean` row per metric, plus error rows
    /// when diagnostics are present.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("metric,mean\n");
        for (name, mean) in self.metrics.iter().zip(&self.means) {
            out.push_str(&format!("{name},{mean}\n"));
        }
        if let Some(errors) = &self.errors {
            out.push_str(&format!("total_errors,{}\n", errors.mean_total_errors));
            out.push_str(&format!(
                "topk_errors@{},{}\n",
                errors.topk_cutoff, errors.mean_topk_errors
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Evaluate a query set against an index.
///
/// Queries without judged documents in the corpus are skipped (and
/// counted). `errors_topk` additionally computes full rank profiles and
/// attaches the pairwise-error summary with that clamp.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    index: &Index,
    params: &DualEncoderParams,
    queries: &[QueryRecord],
    qrels: &Qrels,
    corpus: &Corpus,
    metrics: &[Metric],
    gain: GainScheme,
    errors_topk: Option<usize>,
) -> Result<MetricsReport> {
    if metrics.is_empty() {
        return Err(Error::EmptyInput("metric list"));
    }
    if errors_topk == Some(0) {
        return Err(Error::InvalidConfig("error clamp k must be >= 1".into()));
    }
    let depth = metrics.iter().map(|m| m.cutoff()).max().unwrap_or(0);

    struct Row {
        qid: String,
        values: Vec<f64>,
        profile: Option<RankProfile>,
    }
    let rows: Vec<Option<Result<Row>>> = queries
        .par_iter()
        .map(|query| {
            let rel = QueryRelevance::build(qrels, corpus, &query.qid);
            if !rel.has_judgments() {
                return None;
            }
            let row = (|| {
                let fv = hash_features(&query.tokens, params.hash_dim)?;
                let q_emb = params.embed_query(&fv)?;
                let ranked: Vec<DocId> = index
                    .search(&q_emb, depth)?
                    .into_iter()
                    .map(|(id, _)| id)
                    .collect();
                let values = metrics
                    .iter()
                    .map(|&m| metric_over_list(m, &ranked, &rel, gain))
                    .collect();
                let profile = match errors_topk {
                    Some(_) => {
                        let scores = index.scores(&q_emb)?;
                        Some(rank_profile_from_scores(&scores, &rel, &query.qid)?)
                    }
                    None => None,
                };
                Ok(Row {
                    qid: query.qid.clone(),
                    values,
                    profile,
                })
            })();
            Some(row)
        })
        .collect();

    let mut per_query = Vec::new();
    let mut profiles = Vec::new();
    let mut skipped = 0usize;
    for row in rows {
        match row {
            None => skipped += 1,
            Some(row) => {
                let row = row?;
                per_query.push(QueryMetrics {
                    qid: row.qid,
                    values: row.values,
                });
                profiles.extend(row.profile);
            }
        }
    }
    let evaluated = per_query.len();
    let means = (0..metrics.len())
        .map(|i| {
            if evaluated == 0 {
                0.0
            } else {
                per_query.iter().map(|r| r.values[i]).sum::<f64>() / evaluated as f64
            }
        })
        .collect();
    let errors = errors_topk.map(|k| -> Result<ErrorSummary> {
        Ok(ErrorSummary {
            mean_total_errors: total_pairwise_errors(&profiles),
            mean_topk_errors: topk_pairwise_errors(&profiles, k),
            topk_cutoff: k,
            buckets: error_distribution(&profiles, &default_error_buckets())?,
        })
    });
    Ok(MetricsReport {
        metrics: metrics.iter().map(|m| m.to_string()).collect(),
        means,
        evaluated,
        skipped,
        per_query,
        errors: errors.transpose()?,
    })
}

/// One retrieval run: per query, its id and the ranked
/// `(external_doc_id, score)` rows.
pub type TrecRun = Vec<(String, Vec<(String, f64)>)>;

/// Retrieve the top `k` for each query, with external document ids, ready
/// for a run file.
pub fn run_from_index(
    index: &Index,
    params: &DualEncoderParams,
    queries: &[QueryRecord],
    corpus: &Corpus,
    k: usize,
) -> Result<TrecRun> {
    queries
        .par_iter()
        .map(|query| {
            let fv = hash_features(&query.tokens, params.hash_dim)?;
            let q_emb = params.embed_query(&fv)?;
            let hits = index
                .search(&q_emb, k)?
                .into_iter()
                .map(|(id, score)| (corpus.doc(id).external_id.clone(), score))
                .collect();
            Ok((query.qid.clone(), hits))
        })
        .collect()
}

/// Write a run in the 6-column TREC format:
/// `qid Q0 external_id rank score tag`.
pub fn save_trec_run(
    path: impl AsRef<Path>,
    run: &[(String, Vec<(String, f64)>)],
    tag: &str,
) -> Result<()> {
    let path = path.as_ref();
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::InvalidConfig(
            "run tag must be non-empty and free of whitespace".into(),
        ));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (qid, hits) in run {
        for (rank0, (external_id, score)) in hits.iter().enumerate() {
            writeln!(w, "{qid} Q0 {external_id} {} {score} {tag}", rank0 + 1)
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
