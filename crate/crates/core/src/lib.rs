//! A desk-scale laboratory for dense-retrieval training, built around one
//! question: *where do the negatives come from, and what does that choice
//! optimize?*
//!
//! The crate trains dual-encoder models over hashed term features with six
//! interchangeable negative-sampling strategies — uniform random, in-batch,
//! static hard (pre-retrieved pools), periodically refreshed static pools,
//! a stabilized static+random mixture, and dynamic hard negatives fetched
//! from a live index each step — and pairs them with the diagnostics needed
//! to see how they differ: exact rank profiles, pairwise error counts
//! (total and top-K), negative-set quality, static/dynamic overlap, and an
//! audit that checks when the top-K-weighted objective and the uniform
//! objective provably agree.
//!
//! # Module map
//!
//! | module | contents |
//! |---|---|
//! | [`corpus`] | documents, queries, qrels, tokenization, hashed features, BM25, synthetic data |
//! | [`encoder`] | dual towers (linear / one-hidden-layer MLP), analytic gradients, checkpoints |
//! | [`index`] | exact inner-product search, product quantization, index files |
//! | [`sampling`] | the negative samplers and pool files |
//! | [`loss`] | pairwise indicator/RankNet/Lambda losses and metric deltas |
//! | [`trainer`] | SGD/Adam, batch assembly, the six strategies, training logs |
//! | [`eval`] | rank profiles, MRR/Recall/NDCG, error distributions, objective audits |
//!
//! # Conventions
//!
//! * Scores are plain inner products; ranked lists order by score
//!   descending with ties broken by ascending internal document id. Every
//!   component uses exactly this comparator, which makes rank-based
//!   identities hold exactly rather than approximately.
//! * All learning math is `f64`; stored index payloads are `f32`.
//! * Every source of randomness is a named ChaCha8 stream derived from one
//!   seed (see [`hashing`]), so runs are bit-reproducible.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod index;
pub mod loss;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
