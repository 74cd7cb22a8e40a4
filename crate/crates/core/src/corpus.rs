//! Document collections, queries, relevance judgments, and term features.
//!
//! The on-disk formats are deliberately boring:
//!
//! * collections — TSV, one `external_id \t text` per line;
//! * queries — TSV, one `qid \t text` per line;
//! * judgments — 4-column whitespace qrels (`qid iteration docid grade`,
//!   the iteration column is ignored).
//!
//! Inside the crate every document is addressed by a dense [`DocId`] in
//! `[0, |C|)` assigned in file order; external string ids appear only at
//! the I/O boundary. Text is reduced to lowercase alphanumeric tokens at
//! load time and never kept raw, so writing a collection back out joins the
//! tokens with single spaces (a lossless round-trip for already-tokenized
//! text).
//!
//! Submodules: [`synthetic`] generates topic-structured corpora for
//! experiments; [`bm25`] provides the lexical retriever used to seed
//! negative pools.

pub mod bm25;
pub mod synthetic;

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::fnv1a_64;

/// Dense internal document id, assigned in collection order.
///
/// Internal ids double as the deterministic tie-breaker everywhere scores
/// are compared: ranked lists order by score descending, then `DocId`
/// ascending.
#[derive(
    Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize, Default,
)]
pub struct DocId(pub u32);

impl DocId {
    /// The id as a `usize` index into corpus-aligned arrays.
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for DocId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One document: its dense id, its external string id, and its tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub internal_id: DocId,
    pub external_id: String,
    /// Lowercase alphanumeric tokens, never empty.
    pub tokens: Vec<String>,
}

/// An immutable document collection with an external-id lookup table.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_external: HashMap<String, DocId>,
}

impl Corpus {
    /// Build a corpus from `(external_id, tokens)` pairs, assigning dense
    /// ids in order. Rejects duplicate external ids and empty token lists.
    pub fn from_token_lists(
        entries: impl IntoIterator<Item = (String, Vec<String>)>,
    ) -> Result<Self> {
        let mut corpus = Corpus::default();
        for (external_id, tokens) in entries {
            corpus.push(external_id, tokens)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, external_id: String, tokens: Vec<String>) -> Result<DocId> {
        if tokens.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "document {external_id:?} has no tokens"
            )));
        }
        if self.docs.len() > u32::MAX as usize {
            return Err(Error::InvalidConfig(
                "corpus exceeds u32::MAX documents".into(),
            ));
        }
        let id = DocId(self.docs.len() as u32);
        match self.by_external.entry(external_id.clone()) {
            Entry::Occupied(_) => {
                return Err(Error::InvalidConfig(format!(
                    "duplicate document id {external_id:?}"
                )))
            }
            Entry::Vacant(slot) => slot.insert(id),
        };
        self.docs.push(Document {
            internal_id: id,
            external_id,
            tokens,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc(&self, id: DocId) -> &Document {
        &self.docs[id.index()]
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    /// Resolve an external id to its dense id, if present.
    pub fn lookup(&self, external_id: &str) -> Option<DocId> {
        self.by_external.get(external_id).copied()
    }

    /// Load a collection from TSV (`external_id \t text` per line).
    ///
    /// Errors name the offending line for missing tabs, empty ids, text
    /// that tokenizes to nothing, and duplicate ids. An empty file is a
    /// valid empty corpus.
    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut corpus = Corpus::default();
        for (lineno, line) in raw.lines().enumerate() {
            let lineno = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let (external_id, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(path, lineno, "expected `id<TAB>text`"))?;
            if external_id.is_empty() {
                return Err(Error::parse(path, lineno, "empty document id"));
            }
            let tokens = tokenize(text);
            if tokens.is_empty() {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("document {external_id:?} has empty text after tokenization"),
                ));
            }
            corpus
                .push(external_id.to_string(), tokens)
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        Ok(corpus)
    }

    /// Write the collection back to TSV, joining tokens with single spaces.
    ///
    /// Reloading the written file yields an identical corpus (same ids,
    /// same tokens), since tokens are already lowercase alphanumeric.
    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for doc in &self.docs {
            writeln!(w, "{}\t{}", doc.external_id, doc.tokens.join(" "))
                .map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Lowercase a text and split it into alphanumeric runs.
///
/// Every character for which [`char::is_alphanumeric`] is false acts as a
/// separator; empty runs are dropped. This is the only tokenizer in the
/// crate — BM25, hashed features, and the synthetic generator all see the
/// same token streams.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// A sparse non-negative feature vector over hashed term indices.
///
/// Entries are sorted by index, indices are unique, and weights are
/// strictly positive (zero-weight entries are never stored).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// `(index, weight)` pairs, sorted ascending by index.
    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest feature index present, if any.
    pub fn max_index(&self) -> Option<u32> {
        self.entries.last().map(|&(i, _)| i)
    }

    /// Sum of absolute weights (the L1 norm).
    pub fn l1(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }
}

/// Map tokens to a sparse vector in a `hash_dim`-dimensional hashed space.
///
/// Each token contributes weight 1 at index `fnv1a_64(token) % hash_dim`;
/// repeated tokens and hash collisions accumulate additively. The output
/// is sorted by index with no zero-weight entries. Requires `hash_dim > 0`.
pub fn hash_features(tokens: &[String], hash_dim: usize) -> Result<FeatureVector> {
    if hash_dim == 0 || hash_dim > u32::MAX as usize {
        return Err(Error::InvalidConfig(format!(
            "hash_dim must be in [1, 2^32); got {hash_dim}"
        )));
    }
    let mut weights: BTreeMap<u32, f64> = BTreeMap::new();
    for token in tokens {
        let idx = (fnv1a_64(token.as_bytes()) % hash_dim as u64) as u32;
        *weights.entry(idx).or_insert(0.0) += 1.0;
    }
    Ok(FeatureVector {
        entries: weights.into_iter().collect(),
    })
}

/// One query: its string id and its tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub qid: String,
    pub tokens: Vec<String>,
}

/// Load queries from TSV (`qid \t text` per line).
///
/// Rejects duplicate qids, empty qids, and queries whose text tokenizes to
/// nothing, naming the offending line.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut queries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (lineno, line) in raw.lines().enumerate() {
        let lineno = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let (qid, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, lineno, "expected `qid<TAB>text`"))?;
        if qid.is_empty() {
            return Err(Error::parse(path, lineno, "empty query id"));
        }
        if let Some(first) = seen.insert(qid.to_string(), lineno) {
            return Err(Error::parse(
                path,
                lineno,
                format!("duplicate query id {qid:?} (first seen on line {first})"),
            ));
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::parse(
                path,
                lineno,
                format!("query {qid:?} has empty text after tokenization"),
            ));
        }
        queries.push(QueryRecord {
            qid: qid.to_string(),
            tokens,
        });
    }
    Ok(queries)
}

/// Write queries to TSV, joining tokens with single spaces.
pub fn save_queries(queries: &[QueryRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for q in queries {
        writeln!(w, "{}\t{}", q.qid, q.tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Graded relevance judgments keyed by `(qid, external doc id)`.
///
/// A document counts as *relevant* — a member of the query's positive set
/// `D+` — iff its grade is at least the configured threshold (default 1).
/// Grade 0 records an explicit negative judgment; unjudged documents are
/// treated as non-relevant wherever membership is tested.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
    threshold: u32,
}

impl Qrels {
    /// Empty judgment set with the default relevance threshold of 1.
    pub fn new() -> Self {
        Qrels {
            judgments: BTreeMap::new(),
            threshold: 1,
        }
    }

    /// Override the relevance threshold (grades `>= threshold` count as
    /// relevant).
    pub fn with_threshold(mut self, threshold: u32) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    /// Record one judgment. Conflicting grades for the same `(qid, docid)`
    /// are an error; exact duplicates are accepted.
    pub fn insert(&mut self, qid: &str, external_id: &str, grade: u32) -> Result<()> {
        let per_query = self.judgments.entry(qid.to_string()).or_default();
        match per_query.entry(external_id.to_string()) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert(grade);
                Ok(())
            }
            std::collections::btree_map::Entry::Occupied(existing) => {
                if *existing.get() == grade {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "conflicting grades for ({qid}, {external_id}): {} vs {grade}",
                        existing.get()
                    )))
                }
            }
        }
    }

    /// Load a 4-column whitespace qrels file: `qid iteration docid grade`.
    ///
    /// The iteration column is read and discarded. Grades must parse as
    /// non-negative integers; anything else errors with the line number.
    pub fn load_trec(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut qrels = Qrels::new();
        for (lineno, line) in raw.lines().enumerate() {
            let lineno = lineno + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected 4 whitespace-separated fields, got {}", fields.len()),
                ));
            }
            let grade: u32 = fields[3].parse().map_err(|_| {
                Error::parse(
                    path,
                    lineno,
                    format!("grade must be a non-negative integer, got {:?}", fields[3]),
                )
            })?;
            qrels
                .insert(fields[0], fields[2], grade)
                .map_err(|e| Error::parse(path, lineno, e.to_string()))?;
        }
        Ok(qrels)
    }

    /// Write judgments in the same 4-column format (iteration fixed to 0),
    /// sorted by qid then docid.
    pub fn save_trec(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (qid, docs) in &self.judgments {
            for (docid, grade) in docs {
                writeln!(w, "{qid} 0 {docid} {grade}").map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Grade for `(qid, docid)`, if judged.
    pub fn grade(&self, qid: &str, external_id: &str) -> Option<u32> {
        self.judgments.get(qid)?.get(external_id).copied()
    }

    /// All judgments for a query, if any.
    pub fn judged(&self, qid: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(qid)
    }

    /// Whether `(qid, docid)` meets the relevance threshold.
    pub fn is_relevant(&self, qid: &str, external_id: &str) -> bool {
        self.grade(qid, external_id)
            .is_some_and(|g| g >= self.threshold)
    }

    /// Query ids with at least one judgment, in sorted order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn num_queries(&self) -> usize {
        self.judgments.len()
    }
}

/// A query's judgments resolved against a corpus: the sorted positive set
/// `D+` plus per-document grades for graded metrics.
///
/// Building this once per query moves all string lookups out of training
/// and evaluation inner loops. Judged documents absent from the corpus are
/// skipped (they cannot be retrieved, so they carry no signal here).
#[derive(Clone, Debug, Default)]
pub struct QueryRelevance {
    /// Relevant documents (grade >= threshold), ascending by id.
    positives: Vec<DocId>,
    /// All judged documents present in the corpus, ascending by id.
    graded: Vec<(DocId, u32)>,
}

impl QueryRelevance {
    pub fn build(qrels: &Qrels, corpus: &Corpus, qid: &str) -> Self {
        let mut graded: Vec<(DocId, u32)> = qrels
            .judged(qid)
            .map(|docs| {
                docs.iter()
                    .filter_map(|(ext, &grade)| corpus.lookup(ext).map(|id| (id, grade)))
                    .collect()
            })
            .unwrap_or_default();
        graded.sort_unstable_by_key(|&(id, _)| id);
        let positives = graded
            .iter()
            .filter(|&&(_, g)| g >= qrels.threshold())
            .map(|&(id, _)| id)
            .collect();
        QueryRelevance { positives, graded }
    }

    /// Construct directly from a positive set (grade 1 each); test helper
    /// and building block for synthetic pipelines.
    pub fn from_positives(mut positives: Vec<DocId>) -> Self {
        positives.sort_unstable();
        positives.dedup();
        let graded = positives.iter().map(|&id| (id, 1)).collect();
        QueryRelevance { positives, graded }
    }

    /// The positive set `D+`, ascending.
    pub fn positives(&self) -> &[DocId] {
        &self.positives
    }

    /// All judged `(doc, grade)` pairs present in the corpus, ascending.
    pub fn graded(&self) -> &[(DocId, u32)] {
        &self.graded
    }

    /// Whether the query has any judged documents in the corpus.
    pub fn has_judgments(&self) -> bool {
        !self.graded.is_empty()
    }

    pub fn is_relevant(&self, id: DocId) -> bool {
        self.positives.binary_search(&id).is_ok()
    }

    /// Grade of a document (0 if unjudged).
    pub fn grade(&self, id: DocId) -> u32 {
        self.graded
            .binary_search_by_key(&id, |&(d, _)| d)
            .map(|i| self.graded[i].1)
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_lowercases_and_splits_on_non_alphanumerics() {
        assert_eq!(
            tokenize("Hello, WORLD!  42-ab_c"),
            vec!["hello", "world", "42", "ab", "c"]
        );
        assert_eq!(tokenize("!!! ??"), Vec::<String>::new());
        assert_eq!(tokenize(""), Vec::<String>::new());
    }

    #[test]
    fn hash_features_sums_repeats_and_sorts() {
        let tokens: Vec<String> = ["b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let fv = hash_features(&tokens, 1 << 20).unwrap();
        assert_eq!(fv.entries().len(), 2);
        // Sorted by index; total weight equals token count.
        assert!(fv.entries().windows(2).all(|w| w[0].0 < w[1].0));
        assert_eq!(fv.l1(), 3.0);
        assert!(fv.entries().iter().all(|&(_, w)| w > 0.0));
    }

    #[test]
    fn hash_features_collisions_accumulate() {
        // hash_dim 1 forces every token into index 0.
        let tokens: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
        let fv = hash_features(&tokens, 1).unwrap();
        assert_eq!(fv.entries(), &[(0, 3.0)]);
        assert!(hash_features(&tokens, 0).is_err());
    }

    #[test]
    fn collection_round_trips_through_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("collection.tsv");
        std::fs::write(&path, "d1\tThe quick brown fox.\nd2\tJumps, jumps again!\n").unwrap();
        let corpus = Corpus::load_tsv(&path).unwrap();
        assert_eq!(corpus.len(), 2);
        assert_eq!(corpus.doc(DocId(0)).tokens, vec!["the", "quick", "brown", "fox"]);
        assert_eq!(corpus.lookup("d2"), Some(DocId(1)));

        let copy = dir.path().join("copy.tsv");
        corpus.save_tsv(&copy).unwrap();
        let reloaded = Corpus::load_tsv(&copy).unwrap();
        assert_eq!(reloaded.docs(), corpus.docs());
    }

    #[test]
    fn collection_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");

        std::fs::write(&path, "d1\t\n").unwrap();
        let err = Corpus::load_tsv(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "line number missing in {err:?}");

        std::fs::write(&path, "d1 no tab here\n").unwrap();
        assert!(Corpus::load_tsv(&path).is_err());

        std::fs::write(&path, "d1\ta\nd1\tb\n").unwrap();
        let err = Corpus::load_tsv(&path).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err:?}");

        std::fs::write(&path, "").unwrap();
        assert!(Corpus::load_tsv(&path).unwrap().is_empty());
    }

    #[test]
    fn queries_reject_duplicates_and_empty_text() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.tsv");
        std::fs::write(&path, "q1\tfirst query\nq2\tsecond one\n").unwrap();
        let queries = load_queries(&path).unwrap();
        assert_eq!(queries.len(), 2);
        assert_eq!(queries[1].tokens, vec!["second", "one"]);

        std::fs::write(&path, "q1\ta\nq1\tb\n").unwrap();
        assert!(load_queries(&path).is_err());
        std::fs::write(&path, "q1\t...\n").unwrap();
        assert!(load_queries(&path).is_err());
    }

    #[test]
    fn qrels_parse_and_threshold_semantics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        std::fs::write(&path, "q1 0 d1 2\nq1 0 d2 0\nq2 0 d1 1\n\n").unwrap();
        let qrels = Qrels::load_trec(&path).unwrap();
        assert_eq!(qrels.grade("q1", "d1"), Some(2));
        assert_eq!(qrels.grade("q1", "d2"), Some(0));
        assert!(qrels.is_relevant("q1", "d1"));
        assert!(!qrels.is_relevant("q1", "d2"), "grade 0 is below threshold 1");
        assert!(!qrels.is_relevant("q1", "unjudged"));

        let strict = qrels.clone().with_threshold(2);
        assert!(strict.is_relevant("q1", "d1"));
        assert!(!strict.is_relevant("q2", "d1"));
    }

    #[test]
    fn qrels_reject_negative_and_malformed_grades() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        std::fs::write(&path, "q1 0 d1 -1\n").unwrap();
        let err = Qrels::load_trec(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "{err:?}");

        std::fs::write(&path, "q1 0 d1\n").unwrap();
        assert!(Qrels::load_trec(&path).is_err());

        std::fs::write(&path, "q1 0 d1 1\nq1 0 d1 2\n").unwrap();
        let err = Qrels::load_trec(&path).unwrap_err().to_string();
        assert!(err.contains("conflicting"), "{err:?}");
    }

    #[test]
    fn qrels_round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.txt");
        let mut qrels = Qrels::new();
        qrels.insert("q2", "d9", 1).unwrap();
        qrels.insert("q1", "d3", 2).unwrap();
        qrels.insert("q1", "d1", 0).unwrap();
        qrels.save_trec(&path).unwrap();
        assert_eq!(Qrels::load_trec(&path).unwrap(), qrels);
    }

    #[test]
    fn query_relevance_resolves_against_corpus() {
        let corpus = Corpus::from_token_lists([
            ("d0".into(), vec!["a".into()]),
            ("d1".into(), vec!["b".into()]),
            ("d2".into(), vec!["c".into()]),
        ])
        .unwrap();
        let mut qrels = Qrels::new();
        qrels.insert("q", "d2", 2).unwrap();
        qrels.insert("q", "d0", 1).unwrap();
        qrels.insert("q", "d1", 0).unwrap();
        qrels.insert("q", "ghost", 3).unwrap(); // not in corpus: dropped

        let rel = QueryRelevance::build(&qrels, &corpus, "q");
        assert_eq!(rel.positives(), &[DocId(0), DocId(2)]);
        assert_eq!(rel.grade(DocId(1)), 0);
        assert_eq!(rel.grade(DocId(2)), 2);
        assert!(rel.is_relevant(DocId(0)));
        assert!(!rel.is_relevant(DocId(1)));
        assert!(rel.has_judgments());

        let none = QueryRelevance::build(&qrels, &corpus, "missing");
        assert!(!none.has_judgments());
    }
}
