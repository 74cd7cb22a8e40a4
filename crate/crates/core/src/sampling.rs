//! Negative-document selection: the heart of the training strategies.
//!
//! Five mechanisms, from cheapest to most informed:
//!
//! * [`sample_random_negatives`] — uniform without replacement from the
//!   corpus minus the query's relevant documents.
//! * [`in_batch_negatives`] — reuse every other row's documents (their
//!   positives *and* their hard negatives) as free negatives.
//! * [`build_static_negatives`] — pre-retrieve a top-`K_pool` hard pool
//!   per query with BM25 or a warm-up dense model, then train against the
//!   frozen pool ([`sample_from_pool`] picks per-step subsets).
//! * [`refresh_static`] — periodically rebuild that pool with the current
//!   model so it tracks the moving embedding space.
//! * [`dynamic_hard_negatives`] — ask the live index for the top-`K`
//!   *currently* misranked documents: over-fetch `K + |D⁺|`, drop the
//!   relevant ones, and what remains is exactly the top-`K` irrelevant
//!   set under the canonical comparator.
//!
//! Every function here upholds one invariant: a relevant document is
//! never emitted as a negative.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::bm25::Bm25Index;
use crate::corpus::{hash_features, Corpus, DocId, Qrels, QueryRecord, QueryRelevance};
use crate::encoder::DualEncoderParams;
use crate::error::{Error, Result};
use crate::index::{ExactIndex, Index};

/// How a static pool was retrieved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolProvenance {
    Bm25,
    WarmupDense,
}

impl std::fmt::Display for PoolProvenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PoolProvenance::Bm25 => "bm25",
            PoolProvenance::WarmupDense => "warmup_dense",
        })
    }
}

/// A frozen per-query set of hard negatives, in retrieval rank order.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativePool {
    per_query: BTreeMap<String, Vec<DocId>>,
    provenance: PoolProvenance,
    k_pool: usize,
    /// Training step at which the pool was (re)built; 0 for initial pools.
    step: u64,
}

/// Sidecar metadata stored next to the pool TSV.
#[derive(Serialize, Deserialize)]
struct PoolMeta {
    provenance: PoolProvenance,
    k_pool: usize,
    step: u64,
}

impl NegativePool {
    /// Assemble a pool, enforcing the `≤ k_pool` length invariant.
    pub fn new(
        per_query: BTreeMap<String, Vec<DocId>>,
        provenance: PoolProvenance,
        k_pool: usize,
        step: u64,
    ) -> Result<Self> {
        if k_pool == 0 {
            return Err(Error::InvalidConfig("k_pool must be >= 1".into()));
        }
        if let Some((qid, list)) = per_query.iter().find(|(_, l)| l.len() > k_pool) {
            return Err(Error::InvalidConfig(format!(
                "pool for query {qid} has {} entries, more than k_pool {k_pool}",
                list.len()
            )));
        }
        Ok(NegativePool {
            per_query,
            provenance,
            k_pool,
            step,
        })
    }

    pub fn provenance(&self) -> PoolProvenance {
        self.provenance
    }

    pub fn k_pool(&self) -> usize {
        self.k_pool
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of queries with an entry (including empty ones).
    pub fn len(&self) -> usize {
        self.per_query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_query.is_empty()
    }

    /// The pool for one query, in retrieval rank order.
    pub fn negatives(&self, qid: &str) -> Option<&[DocId]> {
        self.per_query.get(qid).map(Vec::as_slice)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.per_query.keys().map(String::as_str)
    }

    /// Write the pool as TSV (`qid<TAB>ext1,ext2,…`, sorted by qid) plus a
    /// JSON sidecar at the same path with extension `json`.
    pub fn save(&self, corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path)?;
        let mut out = String::new();
        for (qid, list) in &self.per_query {
            let externals: Vec<&str> = list
                .iter()
                .map(|&id| corpus.doc(id).external_id.as_str())
                .collect();
            out.push_str(qid);
            out.push('\t');
            out.push_str(&externals.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))?;
        let meta = PoolMeta {
            provenance: self.provenance,
            k_pool: self.k_pool,
            step: self.step,
        };
        let mut json = serde_json::to_string_pretty(&meta).expect("plain struct");
        json.push('\n');
        fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    /// Read a pool written by [`NegativePool::save`], resolving external
    /// ids against the corpus.
    pub fn load(corpus: &Corpus, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path)?;
        let meta_text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: PoolMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Json {
            path: sidecar.clone(),
            source: e,
        })?;

        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut per_query = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line_no = line_no + 1;
            let (qid, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, line_no, "expected qid<TAB>ids"))?;
            if qid.is_empty() {
                return Err(Error::parse(path, line_no, "empty query id"));
            }
            let mut ids = Vec::new();
            if !rest.is_empty() {
                for external in rest.split(',') {
                    let id = corpus.lookup(external).ok_or_else(|| {
                        Error::parse(
                            path,
                            line_no,
                            format!("document {external:?} not in corpus"),
                        )
                    })?;
                    ids.push(id);
                }
            }
            if per_query.insert(qid.to_string(), ids).is_some() {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("duplicate query id {qid:?}"),
                ));
            }
        }
        NegativePool::new(per_query, meta.provenance, meta.k_pool, meta.step)
    }
}

/// The sidecar lives at the pool path with its extension replaced by
/// `json`; a pool path already ending in `.json` would collide with it.
fn sidecar_path(path: &Path) -> Result<std::path::PathBuf> {
    if path.extension().is_some_and(|e| e == "json") {
        return Err(Error::InvalidConfig(format!(
            "pool path {} must not use the .json extension (reserved for the sidecar)",
            path.display()
        )));
    }
    let mut sidecar = path.to_path_buf();
    sidecar.set_extension("json");
    Ok(sidecar)
}

/// A first-stage retriever for building static pools.
pub enum Retriever<'a> {
    Bm25(&'a Bm25Index),
    Dense {
        params: &'a DualEncoderParams,
        index: &'a Index,
    },
}

impl Retriever<'_> {
    fn provenance(&self) -> PoolProvenance {
        match self {
            Retriever::Bm25(_) => PoolProvenance::Bm25,
            Retriever::Dense { .. } => PoolProvenance::WarmupDense,
        }
    }

    /// Top-`k` retrieval for one query, rank order.
    pub fn retrieve(&self, tokens: &[String], k: usize) -> Result<Vec<(DocId, f64)>> {
        match self {
            Retriever::Bm25(bm25) => Ok(bm25.top_k(tokens, k)),
            Retriever::Dense { params, index } => {
                let fv = hash_features(tokens, params.hash_dim)?;
                index.search(&params.embed_query(&fv)?, k)
            }
        }
    }
}

/// Retrieve a static hard-negative pool: per query, the top candidates
/// minus the relevant ones, truncated to `k_pool` and kept in rank order.
///
/// A query yielding no non-relevant candidates is recorded with an empty
/// list and logged as a warning — training simply skips it.
pub fn build_static_negatives(
    retriever: &Retriever<'_>,
    queries: &[QueryRecord],
    k_pool: usize,
    qrels: &Qrels,
    corpus: &Corpus,
    step: u64,
) -> Result<NegativePool> {
    if k_pool == 0 {
        return Err(Error::InvalidConfig("k_pool must be >= 1".into()));
    }
    let lists: Vec<(String, Vec<DocId>)> = queries
        .par_iter()
        .map(|query| -> Result<(String, Vec<DocId>)> {
            let rel = QueryRelevance::build(qrels, corpus, &query.qid);
            let overfetch = k_pool + rel.positives().len();
            let hits = retriever.retrieve(&query.tokens, overfetch)?;
            let negatives: Vec<DocId> = hits
                .into_iter()
                .map(|(id, _)| id)
                .filter(|&id| !rel.is_relevant(id))
                .take(k_pool)
                .collect();
            Ok((query.qid.clone(), negatives))
        })
        .collect::<Result<_>>()?;

    let mut per_query = BTreeMap::new();
    for (qid, list) in lists {
        if list.is_empty() {
            log::warn!("query {qid} has no non-relevant candidates; pool entry left empty");
        }
        per_query.insert(qid, list);
    }
    NegativePool::new(per_query, retriever.provenance(), k_pool, step)
}

/// At a refresh step (`step % period == 0`), re-encode the corpus with the
/// current parameters, rebuild the exact index, and retrieve a fresh pool
/// stamped with `step`; otherwise hand back the existing pool untouched.
/// `period = None` never refreshes (pure static training).
pub fn refresh_static<'a>(
    pool: &'a NegativePool,
    params: &DualEncoderParams,
    corpus: &Corpus,
    queries: &[QueryRecord],
    qrels: &Qrels,
    step: u64,
    period: Option<u64>,
) -> Result<Cow<'a, NegativePool>> {
    let Some(period) = period else {
        return Ok(Cow::Borrowed(pool));
    };
    if period == 0 {
        return Err(Error::InvalidConfig("refresh period must be >= 1".into()));
    }
    if step % period != 0 {
        return Ok(Cow::Borrowed(pool));
    }
    let index = Index::Exact(ExactIndex::from_params(corpus, params)?);
    let retriever = Retriever::Dense {
        params,
        index: &index,
    };
    let fresh = build_static_negatives(&retriever, queries, pool.k_pool(), qrels, corpus, step)?;
    Ok(Cow::Owned(fresh))
}

/// Draw `n` documents uniformly without replacement from the corpus minus
/// the query's relevant set. Asking for every non-relevant document
/// returns them all (ascending id); asking for more is an error.
pub fn sample_random_negatives(
    qid: &str,
    n: usize,
    rel: &QueryRelevance,
    n_docs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DocId>> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "must request at least one random negative".into(),
        ));
    }
    let available = n_docs - rel.positives().len();
    if n > available {
        return Err(Error::NotEnoughNegatives {
            qid: qid.to_string(),
            requested: n,
            available,
        });
    }
    if n == available {
        return Ok((0..n_docs as u32)
            .map(DocId)
            .filter(|&id| !rel.is_relevant(id))
            .collect());
    }
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let id = DocId(rng.random_range(0..n_docs as u32));
        if rel.is_relevant(id) || !chosen.insert(id) {
            continue;
        }
        out.push(id);
    }
    Ok(out)
}

/// One training example inside a batch: a query, its positive, and the
/// hard negatives chosen for it this step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRow {
    pub qid: String,
    pub positive: DocId,
    pub hard_negatives: Vec<DocId>,
}

/// The free negatives one row inherits from the rest of its batch: every
/// document of every *other* row (positives and hard negatives alike),
/// minus anything relevant to this row's query, first occurrence kept.
pub fn in_batch_negatives(batch: &[BatchRow], row_index: usize, rel: &QueryRelevance) -> Vec<DocId> {
    assert!(row_index < batch.len(), "row index out of bounds");
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, row) in batch.iter().enumerate() {
        if i == row_index {
            continue;
        }
        for &id in std::iter::once(&row.positive).chain(&row.hard_negatives) {
            if !rel.is_relevant(id) && seen.insert(id) {
                out.push(id);
            }
        }
    }
    out
}

/// How per-step negatives are picked out of a static pool.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSelection {
    /// Uniform without replacement over the whole pool.
    #[default]
    Uniform,
    /// The pool's `n` best-ranked entries, deterministically.
    TopN,
}

/// Select up to `n` negatives from one query's pool. A pool shorter than
/// `n` yields the whole pool; an empty pool yields nothing (the caller
/// skips the query).
pub fn sample_from_pool(
    pool_list: &[DocId],
    n: usize,
    selection: PoolSelection,
    rng: &mut ChaCha8Rng,
) -> Vec<DocId> {
    match selection {
        PoolSelection::TopN => pool_list.iter().take(n).copied().collect(),
        PoolSelection::Uniform => {
            if n >= pool_list.len() {
                return pool_list.to_vec();
            }
            // Partial Fisher–Yates: the first n slots become the sample.
            let mut pool: Vec<DocId> = pool_list.to_vec();
            for i in 0..n {
                let j = rng.random_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(n);
            pool
        }
    }
}

/// Retrieved documents with index scores, best first.
pub type ScoredHits = Vec<(DocId, f64)>;

/// The current model's top-`k` misranked documents, plus the raw
/// over-fetched hits they were filtered from (rank order, scores
/// straight from the index).
pub fn dynamic_hard_with_hits(
    index: &Index,
    q_emb: &[f64],
    k: usize,
    rel: &QueryRelevance,
) -> Result<(Vec<DocId>, ScoredHits)> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "dynamic top-k must be >= 1".into(),
        ));
    }
    let hits = index.search(q_emb, k + rel.positives().len())?;
    let negatives: Vec<DocId> = hits
        .iter()
        .map(|&(id, _)| id)
        .filter(|&id| !rel.is_relevant(id))
        .take(k)
        .collect();
    Ok((negatives, hits))
}

/// Exactly the `k` top-ranked irrelevant documents under the canonical
/// comparator (fewer if the corpus runs out): over-fetch `k + |D⁺|`,
/// drop the relevant ones, truncate.
pub fn dynamic_hard_negatives(
    index: &Index,
    q_emb: &[f64],
    k: usize,
    rel: &QueryRelevance,
) -> Result<Vec<DocId>> {
    Ok(dynamic_hard_with_hits(index, q_emb, k, rel)?.0)
}
