//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Parse errors
//! carry the offending path and 1-based line number so a bad input file can
//! be fixed without guesswork; numeric errors name the quantity (and, for
//! gradients, the parameter block) that went wrong.

use std::path::PathBuf;

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// All errors produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying I/O failure (file missing, permission denied, ...).
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A text input file (TSV, qrels, CSV) failed to parse.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        /// 1-based line number.
        line: usize,
        msg: String,
    },

    /// A binary artifact (checkpoint or index) is malformed.
    #[error("bad binary format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Two tensors/vectors that must agree in dimension do not.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A query id was not found where one was required.
    #[error("unknown query id: {0}")]
    UnknownQuery(String),

    /// A document id was not found where one was required.
    #[error("unknown document id: {0}")]
    UnknownDocument(String),

    /// A query has no judged documents but an operation required some.
    #[error("query {0} has no judged documents in the corpus")]
    Unjudged(String),

    /// A sampler was asked for more negatives than exist.
    #[error("cannot sample {requested} negatives for query {qid}: only {available} non-relevant documents exist")]
    NotEnoughNegatives {
        qid: String,
        requested: usize,
        available: usize,
    },

    /// A gradient became NaN or infinite during training.
    #[error("non-finite gradient in parameter block {tower}.{block} at step {step}")]
    NonFiniteGradient {
        tower: &'static str,
        block: &'static str,
        step: u64,
    },

    /// A training strategy is missing a required input.
    #[error("strategy {strategy} requires {what}, which was not provided")]
    MissingPrerequisite {
        strategy: &'static str,
        what: &'static str,
    },

    /// A metric name could not be parsed.
    #[error("unknown metric {name:?}; valid metrics are mrr@K, ndcg@K, r@K (e.g. mrr@10)")]
    UnknownMetric { name: String },

    /// An operation received an empty set where a non-empty one is required.
    #[error("{0} must be non-empty")]
    EmptyInput(&'static str),
}

impl Error {
    /// Attach a path to a raw [`std::io::Error`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a path and line number to a parse failure.
    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Attach a path to a binary-format failure.
    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
