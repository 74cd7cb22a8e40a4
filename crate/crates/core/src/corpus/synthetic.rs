//! Seeded generation of topic-structured retrieval benchmarks.
//!
//! The generator builds a corpus of `n_topics` latent topics. Each topic
//! owns a small term set drawn (with replacement) from a shared main
//! vocabulary — one *core* term that appears in every document of the
//! topic plus a handful of peripheral terms — and a parallel term set
//! drawn from a disjoint *synonym* vocabulary that never appears in any
//! document. Relevance is the shared latent topic: every document of the
//! query's topic is relevant with grade 1, and documents are assigned to
//! topics round-robin, so every query has at least one relevant document
//! whenever `n_topics <= n_docs`.
//!
//! Queries come in two kinds:
//!
//! * ordinary queries draw their terms from the topic's main set,
//!   guaranteeing a shared term (the core) with each relevant document;
//! * *lexically gapped* queries — a configurable fraction per split —
//!   draw from the topic's synonym set instead and therefore share no
//!   term with any document at all. They are unreachable for lexical
//!   scoring and can only be solved by an encoder that learns the
//!   synonym-to-topic association.
//!
//! Because topic term sets are sampled with replacement from a finite
//! vocabulary, distinct topics share terms; lexical neighbors of a query
//! therefore include documents of other topics, which is what makes the
//! retrieval task non-trivial.
//!
//! Identical `(config, seed)` pairs yield byte-identical data.

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Qrels, QueryRecord};
use crate::error::{Error, Result};
use crate::hashing::stream_rng;

/// Shape of a generated benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub n_train_queries: usize,
    pub n_dev_queries: usize,
    /// Number of latent topics; must not exceed `n_docs`.
    pub n_topics: usize,
    /// Size of the main vocabulary (the synonym vocabulary has the same
    /// size and is disjoint from it).
    pub vocab_size: usize,
    pub terms_per_doc: usize,
    pub terms_per_query: usize,
    /// Fraction of queries per split whose terms come from the synonym
    /// vocabulary; in `[0, 1]`.
    pub lexical_gap_fraction: f64,
}

impl Default for SyntheticConfig {
    /// Desk-scale defaults: 10k documents, 1k/200 queries, 1250 topics
    /// (≈8 relevant documents per query), no lexical gap.
    fn default() -> Self {
        SyntheticConfig {
            n_docs: 10_000,
            n_train_queries: 1_000,
            n_dev_queries: 200,
            n_topics: 1_250,
            vocab_size: 4_000,
            terms_per_doc: 12,
            terms_per_query: 3,
            lexical_gap_fraction: 0.0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        let counts = [
            ("n_docs", self.n_docs),
            ("n_train_queries", self.n_train_queries),
            ("n_dev_queries", self.n_dev_queries),
            ("n_topics", self.n_topics),
            ("vocab_size", self.vocab_size),
            ("terms_per_doc", self.terms_per_doc),
            ("terms_per_query", self.terms_per_query),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.n_topics > self.n_docs {
            return Err(Error::InvalidConfig(format!(
                "n_topics ({}) must not exceed n_docs ({}): every topic needs a document",
                self.n_topics, self.n_docs
            )));
        }
        if !(0.0..=1.0).contains(&self.lexical_gap_fraction) {
            return Err(Error::InvalidConfig(format!(
                "lexical_gap_fraction must be in [0, 1], got {}",
                self.lexical_gap_fraction
            )));
        }
        Ok(())
    }
}

/// A generated benchmark: corpus, query splits, and judgments.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub train_queries: Vec<QueryRecord>,
    pub dev_queries: Vec<QueryRecord>,
    pub qrels: Qrels,
}

/// One topic's term ids: index 0 is the core term present in every
/// document (and every ordinary query) of the topic.
struct TopicTerms {
    main: Vec<usize>,
    synonym: Vec<usize>,
}

/// Generate a benchmark. The same `(cfg, seed)` always produces identical
/// output, independent of platform.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = stream_rng(seed, &[crate::hashing::fnv1a_64(b"synthetic")]);

    // Topic term sets: one core + a few peripheral terms per side.
    let peripheral = cfg.terms_per_doc.max(3);
    let topics: Vec<TopicTerms> = (0..cfg.n_topics)
        .map(|_| {
            let mut draw = |n: usize| -> Vec<usize> {
                (0..n).map(|_| rng.random_range(0..cfg.vocab_size)).collect()
            };
            TopicTerms {
                main: draw(1 + peripheral),
                synonym: draw(1 + peripheral),
            }
        })
        .collect();

    // Documents: round-robin topic assignment, core term first.
    let mut corpus = Corpus::default();
    for i in 0..cfg.n_docs {
        let terms = &topics[i % cfg.n_topics].main;
        let mut tokens = Vec::with_capacity(cfg.terms_per_doc);
        tokens.push(format!("w{}", terms[0]));
        for _ in 1..cfg.terms_per_doc {
            let t = terms[1 + rng.random_range(0..peripheral)];
            tokens.push(format!("w{t}"));
        }
        corpus.push(format!("D{i}"), tokens)?;
    }

    let mut qrels = Qrels::new();
    let mut make_split = |prefix: &str, n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        // Exactly round(fraction * n) gapped queries, chosen by shuffle.
        let n_gap = ((cfg.lexical_gap_fraction * n as f64).round() as usize).min(n);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let mut gapped = vec![false; n];
        for &q in order.iter().take(n_gap) {
            gapped[q] = true;
        }

        let mut queries = Vec::with_capacity(n);
        for (q, &gap) in gapped.iter().enumerate() {
            let topic = rng.random_range(0..cfg.n_topics);
            let (terms, letter) = if gap {
                (&topics[topic].synonym, 's')
            } else {
                (&topics[topic].main, 'w')
            };
            let mut tokens = Vec::with_capacity(cfg.terms_per_query);
            tokens.push(format!("{letter}{}", terms[0]));
            for _ in 1..cfg.terms_per_query {
                let t = terms[1 + rng.random_range(0..peripheral)];
                tokens.push(format!("{letter}{t}"));
            }
            let qid = format!("{prefix}{q}");
            // Relevant set: every document of the topic.
            let mut doc = topic;
            while doc < cfg.n_docs {
                qrels.insert(&qid, &format!("D{doc}"), 1)?;
                doc += cfg.n_topics;
            }
            queries.push(QueryRecord { qid, tokens });
        }
        Ok::<_, Error>(queries)
    };

    let train_queries = make_split("QT", cfg.n_train_queries, &mut rng)?;
    let dev_queries = make_split("QD", cfg.n_dev_queries, &mut rng)?;

    Ok(SyntheticData {
        corpus,
        train_queries,
        dev_queries,
        qrels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(gap: f64) -> SyntheticConfig {
        SyntheticConfig {
            n_docs: 120,
            n_train_queries: 30,
            n_dev_queries: 10,
            n_topics: 24,
            vocab_size: 80,
            terms_per_doc: 6,
            terms_per_query: 3,
            lexical_gap_fraction: gap,
        }
    }

    fn shared_terms(q: &QueryRecord, doc_tokens: &[String]) -> usize {
        let doc: HashSet<&str> = doc_tokens.iter().map(String::as_str).collect();
        q.tokens.iter().filter(|t| doc.contains(t.as_str())).count()
    }

    #[test]
    fn every_query_has_a_relevant_document() {
        let data = generate_synthetic(&small(0.3), 11).unwrap();
        for q in data.train_queries.iter().chain(&data.dev_queries) {
            let judged = data.qrels.judged(&q.qid).expect("qid judged");
            assert!(!judged.is_empty());
            for ext in judged.keys() {
                assert!(data.corpus.lookup(ext).is_some(), "judged doc in corpus");
            }
        }
    }

    #[test]
    fn zero_gap_means_every_query_overlaps_every_relevant_doc() {
        let data = generate_synthetic(&small(0.0), 5).unwrap();
        for q in data.train_queries.iter().chain(&data.dev_queries) {
            for ext in data.qrels.judged(&q.qid).unwrap().keys() {
                let doc = data.corpus.doc(data.corpus.lookup(ext).unwrap());
                assert!(
                    shared_terms(q, &doc.tokens) >= 1,
                    "query {} shares no term with relevant doc {}",
                    q.qid,
                    ext
                );
            }
        }
    }

    #[test]
    fn full_gap_means_no_query_shares_any_term_with_relevant_docs() {
        let data = generate_synthetic(&small(1.0), 5).unwrap();
        for q in data.train_queries.iter().chain(&data.dev_queries) {
            for ext in data.qrels.judged(&q.qid).unwrap().keys() {
                let doc = data.corpus.doc(data.corpus.lookup(ext).unwrap());
                assert_eq!(shared_terms(q, &doc.tokens), 0, "query {}", q.qid);
            }
        }
    }

    #[test]
    fn gap_fraction_is_applied_exactly_per_split() {
        let data = generate_synthetic(&small(0.3), 9).unwrap();
        // Gapped queries are exactly those using the synonym vocabulary
        // (tokens starting with 's').
        let count = |qs: &[QueryRecord]| {
            qs.iter()
                .filter(|q| q.tokens.iter().all(|t| t.starts_with('s')))
                .count()
        };
        assert_eq!(count(&data.train_queries), 9); // round(0.3 * 30)
        assert_eq!(count(&data.dev_queries), 3); // round(0.3 * 10)
    }

    #[test]
    fn identical_seed_and_config_reproduce_identical_data() {
        let a = generate_synthetic(&small(0.5), 42).unwrap();
        let b = generate_synthetic(&small(0.5), 42).unwrap();
        assert_eq!(a.corpus.docs(), b.corpus.docs());
        assert_eq!(a.train_queries, b.train_queries);
        assert_eq!(a.dev_queries, b.dev_queries);
        assert_eq!(a.qrels, b.qrels);

        let c = generate_synthetic(&small(0.5), 43).unwrap();
        assert_ne!(a.corpus.docs(), c.corpus.docs(), "seed must matter");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(0.0);
        cfg.n_topics = cfg.n_docs + 1;
        assert!(generate_synthetic(&cfg, 1).is_err());

        let mut cfg = small(0.0);
        cfg.vocab_size = 0;
        assert!(generate_synthetic(&cfg, 1).is_err());

        let cfg = small(1.5);
        assert!(generate_synthetic(&cfg, 1).is_err());

        let mut cfg = small(0.0);
        cfg.terms_per_query = 0;
        assert!(generate_synthetic(&cfg, 1).is_err());
    }
}
