//! Inner-product document indexes: exact scan and product quantization.
//!
//! Both index kinds store 32-bit floats (the only place this crate drops
//! below `f64`), score with `f64` accumulation, and rank with the shared
//! comparator: score descending, ties broken by ascending [`DocId`]. The
//! exact index is a flat row store scanned in full; the PQ index splits
//! each vector into `m` subvectors, quantizes each against a per-subspace
//! codebook of `k_c ≤ 256` centroids (one byte per subspace), and scores
//! through a per-query lookup table of `⟨q_sub, centroid⟩` partial dots.
//!
//! Codebooks are trained with per-subspace Lloyd k-means, seeded
//! k-means++-style from a caller seed. Clusters that empty out are
//! re-seeded to the point currently farthest from its own centroid, which
//! keeps the within-cluster objective non-increasing across iterations.
//!
//! Index files are little-endian with magic `DNIX`:
//!
//! ```text
//! magic    4 bytes  "DNIX"
//! version  u32      currently 1
//! kind     u32      0 = exact, 1 = pq
//! n_docs   u64
//! d_emb    u32
//! m        u32      0 for exact
//! k_c      u32      0 for exact
//! payload           exact: rows f32[n_docs × d_emb]
//!                   pq:    centroids f32[m × k_c × d_emb/m], then
//!                          codes u8[n_docs × m]
//! ```

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{hash_features, Corpus, DocId, QueryRecord, Qrels, QueryRelevance};
use crate::encoder::DualEncoderParams;
use crate::error::{Error, Result};
use crate::hashing::{fnv1a_64, stream_rng};

/// Index file magic.
pub const INDEX_MAGIC: [u8; 4] = *b"DNIX";
const INDEX_VERSION: u32 = 1;

/// Order two scored documents by the crate-wide ranking comparator.
///
/// `Ordering::Less` means `a` ranks strictly before `b`: higher score
/// first, equal scores broken by ascending id. Scores are compared with
/// [`f64::total_cmp`], so the order is total even for non-finite values.
pub fn rank_order(a: &(DocId, f64), b: &(DocId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Heap entry ordered so the *worst*-ranked candidate is the maximum.
struct Candidate(DocId, f64);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&(self.0, self.1), &(other.0, other.1))
    }
}

/// Select the `k` best-ranked `(doc, score)` pairs from a scored stream,
/// returned in rank order.
fn select_top_k(scored: impl Iterator<Item = (DocId, f64)>, k: usize) -> Vec<(DocId, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
    for (id, score) in scored {
        if heap.len() < k {
            heap.push(Candidate(id, score));
        } else if let Some(worst) = heap.peek() {
            if rank_order(&(id, score), &(worst.0, worst.1)) == Ordering::Less {
                heap.pop();
                heap.push(Candidate(id, score));
            }
        }
    }
    let mut out: Vec<(DocId, f64)> = heap.into_iter().map(|c| (c.0, c.1)).collect();
    out.sort_unstable_by(rank_order);
    out
}

/// Flat row store scored by exhaustive scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactIndex {
    d_emb: usize,
    n_docs: usize,
    /// Row-major `n_docs × d_emb`, internal-id order.
    rows: Vec<f32>,
}

impl ExactIndex {
    /// Build from `f64` embeddings (one per document, internal-id order),
    /// narrowing to `f32` storage. An empty collection is a valid index.
    pub fn build(d_emb: usize, embeddings: &[Vec<f64>]) -> Result<Self> {
        if d_emb == 0 {
            return Err(Error::InvalidConfig("index d_emb must be >= 1".into()));
        }
        let mut rows = Vec::with_capacity(embeddings.len() * d_emb);
        for emb in embeddings {
            if emb.len() != d_emb {
                return Err(Error::DimensionMismatch {
                    what: "document embedding vs index d_emb",
                    expected: d_emb,
                    actual: emb.len(),
                });
            }
            rows.extend(emb.iter().map(|&v| v as f32));
        }
        Ok(ExactIndex {
            d_emb,
            n_docs: embeddings.len(),
            rows,
        })
    }

    /// Encode every document of a corpus with the doc tower and build the
    /// index over the results.
    pub fn from_params(corpus: &Corpus, params: &DualEncoderParams) -> Result<Self> {
        let embeddings = encode_corpus(corpus, params)?;
        ExactIndex::build(params.d_emb, &embeddings)
    }

    pub fn len(&self) -> usize {
        self.n_docs
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    /// Stored (f32) row of one document.
    pub fn row(&self, id: DocId) -> &[f32] {
        let i = id.index();
        &self.rows[i * self.d_emb..(i + 1) * self.d_emb]
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.d_emb {
            return Err(Error::DimensionMismatch {
                what: "query embedding vs index d_emb",
                expected: self.d_emb,
                actual: q.len(),
            });
        }
        Ok(())
    }

    fn score_row(&self, q: &[f64], id: DocId) -> f64 {
        let mut acc = 0.0;
        for (x, &y) in q.iter().zip(self.row(id)) {
            acc += x * f64::from(y);
        }
        acc
    }

    /// Score every document (`f64` accumulation), internal-id order.
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_query(q)?;
        Ok((0..self.n_docs)
            .map(|i| self.score_row(q, DocId(i as u32)))
            .collect())
    }

    /// Exhaustive top-`min(k, |C|)` search in rank order.
    pub fn search(&self, q: &[f64], k: usize) -> Result<Vec<(DocId, f64)>> {
        self.check_query(q)?;
        Ok(select_top_k(
            (0..self.n_docs).map(|i| {
                let id = DocId(i as u32);
                (id, self.score_row(q, id))
            }),
            k,
        ))
    }
}

/// Per-subspace centroid table for product quantization.
#[derive(Clone, Debug, PartialEq)]
pub struct PqCodebook {
    m: usize,
    k_c: usize,
    sub_dim: usize,
    /// `m × k_c × sub_dim`, row-major.
    centroids: Vec<f32>,
}

impl PqCodebook {
    /// Assemble a codebook from raw centroids (`m × k_c × sub_dim` values).
    pub fn from_centroids(m: usize, k_c: usize, sub_dim: usize, centroids: Vec<f32>) -> Result<Self> {
        validate_pq_shape(m, k_c)?;
        if sub_dim == 0 || centroids.len() != m * k_c * sub_dim {
            return Err(Error::DimensionMismatch {
                what: "codebook centroid payload",
                expected: m * k_c * sub_dim,
                actual: centroids.len(),
            });
        }
        Ok(PqCodebook {
            m,
            k_c,
            sub_dim,
            centroids,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k_c(&self) -> usize {
        self.k_c
    }

    pub fn sub_dim(&self) -> usize {
        self.sub_dim
    }

    pub fn d_emb(&self) -> usize {
        self.m * self.sub_dim
    }

    /// Centroid `c` of subspace `mi`.
    pub fn centroid(&self, mi: usize, c: usize) -> &[f32] {
        let start = (mi * self.k_c + c) * self.sub_dim;
        &self.centroids[start..start + self.sub_dim]
    }

    /// Quantize one full-dimensional vector: per subspace, the nearest
    /// centroid by squared L2 distance, ties to the lowest centroid id.
    pub fn encode(&self, vector: &[f64]) -> Result<Vec<u8>> {
        if vector.len() != self.d_emb() {
            return Err(Error::DimensionMismatch {
                what: "vector vs codebook d_emb",
                expected: self.d_emb(),
                actual: vector.len(),
            });
        }
        let mut codes = Vec::with_capacity(self.m);
        for mi in 0..self.m {
            let sub = &vector[mi * self.sub_dim..(mi + 1) * self.sub_dim];
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..self.k_c {
                let cent = self.centroid(mi, c);
                let mut d = 0.0;
                for (x, &y) in sub.iter().zip(cent) {
                    let diff = x - f64::from(y);
                    d += diff * diff;
                }
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            codes.push(best as u8);
        }
        Ok(codes)
    }
}

fn validate_pq_shape(m: usize, k_c: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidConfig("pq m must be >= 1".into()));
    }
    if k_c == 0 || k_c > 256 {
        return Err(Error::InvalidConfig(format!(
            "pq k_c must be in [1, 256] (codes are one byte), got {k_c}"
        )));
    }
    Ok(())
}

/// Objective traces from PQ training: one non-increasing series of
/// within-cluster squared distances per subspace, recorded once per Lloyd
/// iteration (after assignment).
#[derive(Clone, Debug, Default)]
pub struct PqTrainReport {
    pub objective: Vec<Vec<f64>>,
}

/// Train a PQ codebook on the stored rows of an exact index.
///
/// Requirements: `m` divides the dimension, `k_c ≤ 256`, and the
/// collection has at least `k_c` vectors. Subspaces are trained
/// independently (in parallel) with seeded k-means++ initialization; the
/// same `(index, m, k_c, iters, seed)` always yields the same codebook.
pub fn train_pq(
    index: &ExactIndex,
    m: usize,
    k_c: usize,
    iters: usize,
    seed: u64,
) -> Result<(PqCodebook, PqTrainReport)> {
    validate_pq_shape(m, k_c)?;
    if index.d_emb % m != 0 {
        return Err(Error::InvalidConfig(format!(
            "pq m ({m}) must divide d_emb ({})",
            index.d_emb
        )));
    }
    if index.len() < k_c {
        return Err(Error::InvalidConfig(format!(
            "cannot train {k_c} centroids from {} vectors",
            index.len()
        )));
    }
    if iters == 0 {
        return Err(Error::InvalidConfig("pq iters must be >= 1".into()));
    }
    let sub_dim = index.d_emb / m;
    let n = index.len();

    let per_subspace: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|mi| {
            // Gather this subspace's points as f64.
            let mut points = Vec::with_capacity(n * sub_dim);
            for i in 0..n {
                let row = index.row(DocId(i as u32));
                points.extend(
                    row[mi * sub_dim..(mi + 1) * sub_dim]
                        .iter()
                        .map(|&v| f64::from(v)),
                );
            }
            let mut rng = stream_rng(seed, &[fnv1a_64(b"pq-kmeans"), mi as u64]);
            kmeans(&points, n, sub_dim, k_c, iters, &mut rng)
        })
        .collect();

    let mut centroids = Vec::with_capacity(m * k_c * sub_dim);
    let mut report = PqTrainReport::default();
    for (cents, trace) in per_subspace {
        centroids.extend(cents.iter().map(|&v| v as f32));
        report.objective.push(trace);
    }
    Ok((
        PqCodebook::from_centroids(m, k_c, sub_dim, centroids)?,
        report,
    ))
}

/// Lloyd k-means with k-means++ seeding on `n` points of dimension `dim`.
/// Returns `(centroids, objective trace)`.
fn kmeans(
    points: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let d2 = |a: &[f64], b: &[f64]| -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            let diff = x - y;
            acc += diff * diff;
        }
        acc
    };

    // k-means++ seeding: D²-weighted draws after a uniform first pick.
    let mut centroids = vec![0.0; k * dim];
    centroids[..dim].copy_from_slice(point(rng.random_range(0..n)));
    let mut dist: Vec<f64> = (0..n).map(|i| d2(point(i), &centroids[..dim])).collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random_range(0.0..total);
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                cum += d;
                if cum > r {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All mass already covered (fewer distinct points than k).
            rng.random_range(0..n)
        };
        centroids[c * dim..(c + 1) * dim].copy_from_slice(point(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            let nd = d2(point(i), &centroids[c * dim..(c + 1) * dim]);
            if nd < *d {
                *d = nd;
            }
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..iters {
        // Assignment: nearest centroid, ties to the lowest centroid id.
        let mut changed = false;
        let mut own_dist = vec![0.0; n];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let p = point(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = d2(p, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                changed = true;
                assign[i] = best;
            }
            own_dist[i] = best_d;
            counts[best] += 1;
        }

        // Re-seed empty clusters to the point farthest from its own
        // centroid, stealing only from clusters that keep at least one
        // point. Strictly decreases the objective.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let mut farthest: Option<usize> = None;
            for i in 0..n {
                if counts[assign[i]] < 2 {
                    continue;
                }
                if farthest.is_none_or(|f| own_dist[i] > own_dist[f]) {
                    farthest = Some(i);
                }
            }
            let Some(p) = farthest else {
                break; // every non-empty cluster is a singleton
            };
            centroids[empty * dim..(empty + 1) * dim].copy_from_slice(point(p));
            counts[assign[p]] -= 1;
            counts[empty] += 1;
            assign[p] = empty;
            own_dist[p] = 0.0;
            changed = true;
        }

        trace.push(own_dist.iter().sum());
        if !changed {
            break;
        }

        // Update step: means of assigned points; empty clusters (possible
        // only in degenerate n == k_c ties) keep their previous centroid.
        let mut sums = vec![0.0; k * dim];
        for i in 0..n {
            let p = point(i);
            let s = &mut sums[assign[i] * dim..(assign[i] + 1) * dim];
            for (acc, x) in s.iter_mut().zip(p) {
                *acc += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (out, s) in centroids[c * dim..(c + 1) * dim]
                    .iter_mut()
                    .zip(&sums[c * dim..(c + 1) * dim])
                {
                    *out = s / inv;
                }
            }
        }
    }
    (centroids, trace)
}

/// Product-quantized index: a codebook plus one byte per `(doc, subspace)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PqIndex {
    n_docs: usize,
    codebook: PqCodebook,
    /// `n_docs × m` codes, row-major.
    codes: Vec<u8>,
}

impl PqIndex {
    /// Train a codebook on the exact index's rows and encode every row.
    pub fn build(
        exact: &ExactIndex,
        m: usize,
        k_c: usize,
        iters: usize,
        seed: u64,
    ) -> Result<(Self, PqTrainReport)> {
        let (codebook, report) = train_pq(exact, m, k_c, iters, seed)?;
        let index = PqIndex::encode_index(exact, codebook)?;
        Ok((index, report))
    }

    /// Encode an exact index with an existing codebook.
    pub fn encode_index(exact: &ExactIndex, codebook: PqCodebook) -> Result<Self> {
        if codebook.d_emb() != exact.d_emb() {
            return Err(Error::DimensionMismatch {
                what: "codebook d_emb vs index d_emb",
                expected: exact.d_emb(),
                actual: codebook.d_emb(),
            });
        }
        let mut codes = Vec::with_capacity(exact.len() * codebook.m());
        for i in 0..exact.len() {
            let row: Vec<f64> = exact
                .row(DocId(i as u32))
                .iter()
                .map(|&v| f64::from(v))
                .collect();
            codes.extend(codebook.encode(&row)?);
        }
        Ok(PqIndex {
            n_docs: exact.len(),
            codebook,
            codes,
        })
    }

    pub fn len(&self) -> usize {
        self.n_docs
    }

    pub fn is_empty(&self) -> bool {
        self.n_docs == 0
    }

    pub fn d_emb(&self) -> usize {
        self.codebook.d_emb()
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn codes(&self, id: DocId) -> &[u8] {
        let m = self.codebook.m();
        &self.codes[id.index() * m..(id.index() + 1) * m]
    }

    /// Reconstruct a document's quantized vector (centroid concatenation).
    pub fn reconstruct(&self, id: DocId) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.d_emb());
        for (mi, &code) in self.codes(id).iter().enumerate() {
            out.extend_from_slice(self.codebook.centroid(mi, code as usize));
        }
        out
    }

    fn check_query(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.d_emb() {
            return Err(Error::DimensionMismatch {
                what: "query embedding vs index d_emb",
                expected: self.d_emb(),
                actual: q.len(),
            });
        }
        Ok(())
    }

    /// Per-query lookup table: `lut[mi][c] = ⟨q_sub(mi), centroid(mi,c)⟩`.
    fn lut(&self, q: &[f64]) -> Vec<f64> {
        let (m, k_c, sub_dim) = (
            self.codebook.m(),
            self.codebook.k_c(),
            self.codebook.sub_dim(),
        );
        let mut lut = Vec::with_capacity(m * k_c);
        for mi in 0..m {
            let sub = &q[mi * sub_dim..(mi + 1) * sub_dim];
            for c in 0..k_c {
                let cent = self.codebook.centroid(mi, c);
                let mut acc = 0.0;
                for (x, &y) in sub.iter().zip(cent) {
                    acc += x * f64::from(y);
                }
                lut.push(acc);
            }
        }
        lut
    }

    fn score_codes(&self, lut: &[f64], id: DocId) -> f64 {
        let k_c = self.codebook.k_c();
        let mut acc = 0.0;
        for (mi, &code) in self.codes(id).iter().enumerate() {
            acc += lut[mi * k_c + code as usize];
        }
        acc
    }

    /// Score every document via the lookup table, internal-id order. The
    /// value for each document equals `⟨q, reconstruct(doc)⟩` up to `f64`
    /// summation order (partial dots are accumulated per subspace).
    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        self.check_query(q)?;
        let lut = self.lut(q);
        Ok((0..self.n_docs)
            .map(|i| self.score_codes(&lut, DocId(i as u32)))
            .collect())
    }

    /// Top-`min(k, |C|)` search through the lookup table, rank order.
    pub fn search(&self, q: &[f64], k: usize) -> Result<Vec<(DocId, f64)>> {
        self.check_query(q)?;
        let lut = self.lut(q);
        Ok(select_top_k(
            (0..self.n_docs).map(|i| {
                let id = DocId(i as u32);
                (id, self.score_codes(&lut, id))
            }),
            k,
        ))
    }
}

/// Either index kind behind one interface (search, scores, persistence).
#[derive(Clone, Debug, PartialEq)]
pub enum Index {
    Exact(ExactIndex),
    Pq(PqIndex),
}

impl Index {
    pub fn len(&self) -> usize {
        match self {
            Index::Exact(i) => i.len(),
            Index::Pq(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d_emb(&self) -> usize {
        match self {
            Index::Exact(i) => i.d_emb(),
            Index::Pq(i) => i.d_emb(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Index::Exact(_) => "exact",
            Index::Pq(_) => "pq",
        }
    }

    pub fn search(&self, q: &[f64], k: usize) -> Result<Vec<(DocId, f64)>> {
        match self {
            Index::Exact(i) => i.search(q, k),
            Index::Pq(i) => i.search(q, k),
        }
    }

    pub fn scores(&self, q: &[f64]) -> Result<Vec<f64>> {
        match self {
            Index::Exact(i) => i.scores(q),
            Index::Pq(i) => i.scores(q),
        }
    }

    /// The document vector this index scores against, as `f64`: the stored
    /// row for exact search, the centroid reconstruction for PQ. Gradients
    /// taken against these vectors match what retrieval sees.
    pub fn doc_vector(&self, id: DocId) -> Vec<f64> {
        match self {
            Index::Exact(i) => i.row(id).iter().map(|&v| f64::from(v)).collect(),
            Index::Pq(i) => i.reconstruct(id).iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Score one document with exactly the arithmetic `search` uses.
    pub fn score_one(&self, q: &[f64], id: DocId) -> Result<f64> {
        match self {
            Index::Exact(i) => {
                i.check_query(q)?;
                Ok(i.score_row(q, id))
            }
            Index::Pq(i) => {
                i.check_query(q)?;
                let sub_dim = i.codebook.sub_dim();
                let mut acc = 0.0;
                for (mi, &code) in i.codes(id).iter().enumerate() {
                    let sub = &q[mi * sub_dim..(mi + 1) * sub_dim];
                    let cent = i.codebook.centroid(mi, code as usize);
                    let mut part = 0.0;
                    for (x, &y) in sub.iter().zip(cent) {
                        part += x * f64::from(y);
                    }
                    acc += part;
                }
                Ok(acc)
            }
        }
    }

    /// Write the index in the `DNIX` binary format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);

        w.write_all(&INDEX_MAGIC).map_err(io)?;
        let (kind, m, k_c) = match self {
            Index::Exact(_) => (0u32, 0u32, 0u32),
            Index::Pq(i) => (1, i.codebook.m() as u32, i.codebook.k_c() as u32),
        };
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&kind.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.d_emb() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&m.to_le_bytes()).map_err(io)?;
        w.write_all(&k_c.to_le_bytes()).map_err(io)?;
        match self {
            Index::Exact(i) => {
                for &v in &i.rows {
                    w.write_all(&v.to_le_bytes()).map_err(io)?;
                }
            }
            Index::Pq(i) => {
                for c in 0..i.codebook.m() * i.codebook.k_c() {
                    let start = c * i.codebook.sub_dim();
                    for &v in &i.codebook.centroids[start..start + i.codebook.sub_dim()] {
                        w.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                w.write_all(&i.codes).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Read an index written by [`Index::save`], validating the header and
    /// exact payload length.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::format(path, "file too short for header"))?;
        if magic != INDEX_MAGIC {
            return Err(Error::format(path, "not an index file (bad magic)"));
        }
        fn u32_field(r: &mut impl Read, path: &Path, name: &str) -> Result<u32> {
            let mut buf = [0u8; 4];
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(path, format!("truncated header field {name}")))?;
            Ok(u32::from_le_bytes(buf))
        }
        let version = u32_field(&mut r, path, "version")?;
        if version != INDEX_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported index version {version}"),
            ));
        }
        let kind = u32_field(&mut r, path, "kind")?;
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)
            .map_err(|_| Error::format(path, "truncated header field n_docs"))?;
        let n_docs = u64::from_le_bytes(buf8) as usize;
        let d_emb = u32_field(&mut r, path, "d_emb")? as usize;
        let m = u32_field(&mut r, path, "m")? as usize;
        let k_c = u32_field(&mut r, path, "k_c")? as usize;
        if d_emb == 0 {
            return Err(Error::format(path, "d_emb must be >= 1"));
        }

        let mut read_f32s = |count: usize, what: &str| -> Result<Vec<f32>> {
            let mut out = Vec::with_capacity(count);
            let mut buf = [0u8; 4];
            for _ in 0..count {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format(path, format!("truncated {what}")))?;
                out.push(f32::from_le_bytes(buf));
            }
            Ok(out)
        };

        let index = match kind {
            0 => {
                if m != 0 || k_c != 0 {
                    return Err(Error::format(path, "exact index with pq header fields"));
                }
                let rows = read_f32s(n_docs * d_emb, "row payload")?;
                Index::Exact(ExactIndex {
                    d_emb,
                    n_docs,
                    rows,
                })
            }
            1 => {
                if m == 0 || d_emb % m != 0 {
                    return Err(Error::format(path, "pq m must divide d_emb"));
                }
                validate_pq_shape(m, k_c).map_err(|e| Error::format(path, e.to_string()))?;
                let sub_dim = d_emb / m;
                let centroids = read_f32s(m * k_c * sub_dim, "codebook payload")?;
                let mut codes = vec![0u8; n_docs * m];
                r.read_exact(&mut codes)
                    .map_err(|_| Error::format(path, "truncated code payload"))?;
                if codes.iter().any(|&c| c as usize >= k_c) {
                    return Err(Error::format(path, "code byte out of centroid range"));
                }
                Index::Pq(PqIndex {
                    n_docs,
                    codebook: PqCodebook::from_centroids(m, k_c, sub_dim, centroids)?,
                    codes,
                })
            }
            other => return Err(Error::format(path, format!("unknown index kind {other}"))),
        };
        let mut probe = [0u8; 1];
        if r.read(&mut probe).map_err(|e| Error::io(path, e))? != 0 {
            return Err(Error::format(path, "trailing bytes after payload"));
        }
        Ok(index)
    }
}

/// Embed every document of a corpus with the doc tower, in id order.
pub fn encode_corpus(corpus: &Corpus, params: &DualEncoderParams) -> Result<Vec<Vec<f64>>> {
    corpus
        .docs()
        .par_iter()
        .map(|doc| {
            let fv = hash_features(&doc.tokens, params.hash_dim)?;
            params.embed_doc(&fv)
        })
        .collect()
}

/// Retrieval quality of an index under a query encoder: mean MRR@10 over
/// the queries that have judged documents in the corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexQuality {
    pub mean_mrr10: f64,
    pub evaluated: usize,
    /// Queries skipped for lack of judged documents.
    pub skipped: usize,
}

/// Measure MRR@10 of `index` for `queries`, embedding with the query
/// tower of `params`. An empty query set yields a zero-query report.
pub fn index_quality(
    index: &Index,
    params: &DualEncoderParams,
    queries: &[QueryRecord],
    qrels: &Qrels,
    corpus: &Corpus,
) -> Result<IndexQuality> {
    let mut total = 0.0;
    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    for query in queries {
        let rel = QueryRelevance::build(qrels, corpus, &query.qid);
        if !rel.has_judgments() {
            skipped += 1;
            continue;
        }
        let fv = hash_features(&query.tokens, params.hash_dim)?;
        let q_emb = params.embed_query(&fv)?;
        let top = index.search(&q_emb, 10)?;
        let rr = top
            .iter()
            .position(|&(id, _)| rel.is_relevant(id))
            .map_or(0.0, |pos| 1.0 / (pos + 1) as f64);
        total += rr;
        evaluated += 1;
    }
    Ok(IndexQuality {
        mean_mrr10: if evaluated == 0 {
            0.0
        } else {
            total / evaluated as f64
        },
        evaluated,
        skipped,
    })
}
