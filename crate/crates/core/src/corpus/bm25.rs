//! BM25 lexical scoring over a tokenized corpus.
//!
//! The scorer uses the standard Robertson/Okapi form with a smoothed,
//! always-positive idf:
//!
//! ```text
//! idf(t)     = ln(1 + (N - df(t) + 0.5) / (df(t) + 0.5))
//! score(q,d) = Σ_{t ∈ q} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 - b + b·|d|/avgdl))
//! ```
//!
//! The sum runs over the query's tokens as a multiset: a term repeated in
//! the query contributes once per occurrence. Since idf is strictly
//! positive, every document containing at least one query term outscores
//! every document containing none (which all sit at exactly 0), and the
//! ranking `score desc, id asc` is a total order shared with the rest of
//! the crate.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId};

/// BM25 free parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    /// Defaults tuned for short keyword queries: `k1 = 0.9`, `b = 0.4`.
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

/// Inverted index with the corpus statistics BM25 needs precomputed.
#[derive(Clone, Debug)]
pub struct Bm25Index {
    params: Bm25Params,
    /// term -> postings (doc, term frequency), ascending by doc id.
    postings: HashMap<String, Vec<(DocId, u32)>>,
    doc_len: Vec<u32>,
    avgdl: f64,
    n_docs: usize,
}

impl Bm25Index {
    /// Build the inverted index and length statistics for a corpus.
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Self {
        let mut postings: HashMap<String, Vec<(DocId, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for doc in corpus.docs() {
            doc_len.push(doc.tokens.len() as u32);
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for token in &doc.tokens {
                *tf.entry(token.as_str()).or_insert(0) += 1;
            }
            // Sort terms so postings construction is order-independent.
            let mut terms: Vec<(&str, u32)> = tf.into_iter().collect();
            terms.sort_unstable_by_key(|&(t, _)| t);
            for (term, count) in terms {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push((doc.internal_id, count));
            }
        }
        let n_docs = corpus.len();
        let total_len: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let avgdl = if n_docs == 0 {
            0.0
        } else {
            total_len as f64 / n_docs as f64
        };
        Bm25Index {
            params,
            postings,
            doc_len,
            avgdl,
            n_docs,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    /// Smoothed inverse document frequency of a term; strictly positive,
    /// and large for terms absent from the corpus (df = 0) — harmless,
    /// since such terms have no postings to score.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.postings.get(term).map_or(0, Vec::len) as f64;
        let n = self.n_docs as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: u32, len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let norm = 1.0 - b + b * f64::from(len) / self.avgdl;
        tf * (k1 + 1.0) / (tf + k1 * norm)
    }

    /// Score a single `(query, document)` pair directly.
    ///
    /// This is the reference implementation of the formula; [`Self::top_k`]
    /// produces exactly these values via the inverted index.
    pub fn score(&self, query_tokens: &[String], doc: DocId) -> f64 {
        let len = self.doc_len[doc.index()];
        let mut total = 0.0;
        for token in query_tokens {
            let tf = self
                .postings
                .get(token.as_str())
                .and_then(|p| p.binary_search_by_key(&doc, |&(d, _)| d).ok().map(|i| p[i].1))
                .unwrap_or(0);
            if tf > 0 {
                total += self.idf(token) * self.term_weight(tf, len);
            }
        }
        total
    }

    /// Rank the whole corpus for a query and return the best `min(k, |C|)`
    /// documents as `(doc, score)`, ordered by score descending with ties
    /// broken by ascending id.
    ///
    /// Documents sharing no term with the query score exactly 0 and fill
    /// the tail of the ranking in id order. An empty query returns an
    /// empty list.
    pub fn top_k(&self, query_tokens: &[String], k: usize) -> Vec<(DocId, f64)> {
        if query_tokens.is_empty() || k == 0 || self.n_docs == 0 {
            return Vec::new();
        }
        // Accumulate scores for documents sharing at least one query term.
        let mut scores: HashMap<DocId, f64> = HashMap::new();
        for token in query_tokens {
            let Some(postings) = self.postings.get(token.as_str()) else {
                continue; // absent term: contributes 0 to every document
            };
            let idf = self.idf(token);
            for &(doc, tf) in postings {
                *scores.entry(doc).or_insert(0.0) +=
                    idf * self.term_weight(tf, self.doc_len[doc.index()]);
            }
        }
        let mut scored: Vec<(DocId, f64)> = scores.into_iter().collect();
        scored.sort_unstable_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("BM25 scores are finite")
                .then_with(|| a.0.cmp(&b.0))
        });

        let k = k.min(self.n_docs);
        if scored.len() >= k {
            scored.truncate(k);
            return scored;
        }
        // Pad with zero-scoring documents in ascending id order.
        let mut matched = vec![false; self.n_docs];
        for &(doc, _) in &scored {
            matched[doc.index()] = true;
        }
        let mut out = scored;
        for (id, _) in matched.iter().enumerate().filter(|(_, &hit)| !hit) {
            if out.len() == k {
                break;
            }
            out.push((DocId(id as u32), 0.0));
        }
        out
    }
}
