//! Dual-encoder models: untied query/document towers over hashed features.
//!
//! The relevance score is always the plain inner product of the two tower
//! outputs — no cosine, no learned temperature — so everything downstream
//! (indexes, samplers, losses) can treat embeddings as opaque vectors.
//!
//! Two architectures share one parameter container:
//!
//! * `linear`: `emb = Wᵀ·fv + b` with `W: hash_dim × d_emb`;
//! * `mlp`: one hidden layer, `emb = W2ᵀ·relu(W1ᵀ·fv + b1) + b2`.
//!
//! All training math is `f64`; 32-bit floats appear only in stored index
//! files. Gradients are computed analytically by [`backprop`], which
//! accumulates `∂⟨embed(fv), g⟩/∂θ` for a caller-supplied upstream vector
//! `g` — the caller owns the chain rule at the score level (for
//! `s = ⟨q, d⟩`, `∂s/∂q = d` and `∂s/∂d = q`).
//!
//! Checkpoints are little-endian binary files with magic `DNLB`:
//!
//! ```text
//! magic    4 bytes  "DNLB"
//! version  u32      currently 1
//! arch     u32      0 = linear, 1 = mlp
//! hash_dim u32
//! d_emb    u32
//! hidden   u32      0 for linear
//! blocks   f64[]    query tower then doc tower, each block row-major:
//!                   linear: w (hash_dim×d_emb), b (d_emb)
//!                   mlp:    w1 (hash_dim×hidden), b1 (hidden),
//!                           w2 (hidden×d_emb),   b2 (d_emb)
//! ```
//!
//! Trailing bytes, short reads, and header mismatches are all errors.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::FeatureVector;
use crate::error::{Error, Result};
use crate::hashing::stream_rng;

/// Checkpoint file magic.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DNLB";
const CHECKPOINT_VERSION: u32 = 1;

/// Encoder architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Linear,
    Mlp,
}

/// Which tower of the dual encoder to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TowerKind {
    Query,
    Doc,
}

impl TowerKind {
    pub fn name(self) -> &'static str {
        match self {
            TowerKind::Query => "query",
            TowerKind::Doc => "doc",
        }
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// The weights of one tower. Gradients reuse the same layout (a gradient
/// is just a tower-shaped accumulator).
#[derive(Clone, Debug, PartialEq)]
pub enum TowerWeights {
    Linear {
        w: Matrix,
        b: Vec<f64>,
    },
    Mlp {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    },
}

impl TowerWeights {
    /// Named parameter blocks in serialization order.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            TowerWeights::Linear { w, b } => vec![("w", w.as_slice()), ("b", b.as_slice())],
            TowerWeights::Mlp { w1, b1, w2, b2 } => vec![
                ("w1", w1.as_slice()),
                ("b1", b1.as_slice()),
                ("w2", w2.as_slice()),
                ("b2", b2.as_slice()),
            ],
        }
    }

    /// Mutable view of the named parameter blocks, same order as
    /// [`Self::blocks`].
    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        match self {
            TowerWeights::Linear { w, b } => {
                vec![("w", w.as_mut_slice()), ("b", b.as_mut_slice())]
            }
            TowerWeights::Mlp { w1, b1, w2, b2 } => vec![
                ("w1", w1.as_mut_slice()),
                ("b1", b1.as_mut_slice()),
                ("w2", w2.as_mut_slice()),
                ("b2", b2.as_mut_slice()),
            ],
        }
    }

    /// A zero-filled tower of the same shape.
    pub fn zeros_like(&self) -> TowerWeights {
        match self {
            TowerWeights::Linear { w, b } => TowerWeights::Linear {
                w: Matrix::zeros(w.rows, w.cols),
                b: vec![0.0; b.len()],
            },
            TowerWeights::Mlp { w1, b1, w2, b2 } => TowerWeights::Mlp {
                w1: Matrix::zeros(w1.rows, w1.cols),
                b1: vec![0.0; b1.len()],
                w2: Matrix::zeros(w2.rows, w2.cols),
                b2: vec![0.0; b2.len()],
            },
        }
    }

    fn total_len(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// Full dual-encoder parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoderParams {
    pub arch: Arch,
    pub hash_dim: usize,
    pub d_emb: usize,
    /// Hidden width for `mlp`; 0 for `linear`.
    pub hidden: usize,
    pub query: TowerWeights,
    pub doc: TowerWeights,
}

impl DualEncoderParams {
    pub fn tower(&self, kind: TowerKind) -> &TowerWeights {
        match kind {
            TowerKind::Query => &self.query,
            TowerKind::Doc => &self.doc,
        }
    }

    pub fn tower_mut(&mut self, kind: TowerKind) -> &mut TowerWeights {
        match kind {
            TowerKind::Query => &mut self.query,
            TowerKind::Doc => &mut self.doc,
        }
    }

    /// Total number of scalar parameters across both towers.
    pub fn num_params(&self) -> usize {
        self.query.total_len() + self.doc.total_len()
    }

    /// Embed a feature vector with the chosen tower. Errors if the vector
    /// addresses features outside `[0, hash_dim)`.
    pub fn embed(&self, fv: &FeatureVector, kind: TowerKind) -> Result<Vec<f64>> {
        self.check_fv(fv)?;
        Ok(match self.tower(kind) {
            TowerWeights::Linear { w, b } => {
                let mut out = b.clone();
                for &(idx, weight) in fv.entries() {
                    for (o, &wi) in out.iter_mut().zip(w.row(idx as usize)) {
                        *o += weight * wi;
                    }
                }
                out
            }
            TowerWeights::Mlp { w1, b1, w2, b2 } => {
                let act = mlp_hidden_activation(w1, b1, fv);
                let mut out = b2.clone();
                for (k, &a) in act.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (o, &wi) in out.iter_mut().zip(w2.row(k)) {
                        *o += a * wi;
                    }
                }
                out
            }
        })
    }

    pub fn embed_query(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        self.embed(fv, TowerKind::Query)
    }

    pub fn embed_doc(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        self.embed(fv, TowerKind::Doc)
    }

    fn check_fv(&self, fv: &FeatureVector) -> Result<()> {
        if let Some(max) = fv.max_index() {
            if max as usize >= self.hash_dim {
                return Err(Error::DimensionMismatch {
                    what: "feature index vs hash_dim",
                    expected: self.hash_dim,
                    actual: max as usize,
                });
            }
        }
        Ok(())
    }
}

/// ReLU hidden activations of an MLP tower (shared by forward and backward
/// passes). The derivative at exactly 0 is taken as 0.
fn mlp_hidden_activation(w1: &Matrix, b1: &[f64], fv: &FeatureVector) -> Vec<f64> {
    let mut pre = b1.to_vec();
    for &(idx, weight) in fv.entries() {
        for (p, &wi) in pre.iter_mut().zip(w1.row(idx as usize)) {
            *p += weight * wi;
        }
    }
    for p in pre.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    pre
}

/// Inner-product relevance score `⟨q, d⟩`, accumulated left to right.
pub fn score(q_emb: &[f64], d_emb: &[f64]) -> Result<f64> {
    if q_emb.len() != d_emb.len() {
        return Err(Error::DimensionMismatch {
            what: "query vs document embedding",
            expected: q_emb.len(),
            actual: d_emb.len(),
        });
    }
    Ok(dot(q_emb, d_emb))
}

/// Unchecked sequential dot product (callers guarantee equal lengths).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Tower-shaped gradient accumulator for both towers.
#[derive(Clone, Debug)]
pub struct ParamGradient {
    pub query: TowerWeights,
    pub doc: TowerWeights,
}

impl ParamGradient {
    /// A zero gradient matching the shape of `params`.
    pub fn zeros_like(params: &DualEncoderParams) -> Self {
        ParamGradient {
            query: params.query.zeros_like(),
            doc: params.doc.zeros_like(),
        }
    }

    pub fn tower_mut(&mut self, kind: TowerKind) -> &mut TowerWeights {
        match kind {
            TowerKind::Query => &mut self.query,
            TowerKind::Doc => &mut self.doc,
        }
    }

    /// First non-finite entry as `(tower, block)`, if any.
    pub fn find_non_finite(&self) -> Option<(&'static str, &'static str)> {
        for (tower_name, tower) in [("query", &self.query), ("doc", &self.doc)] {
            for (block_name, block) in tower.blocks() {
                if block.iter().any(|v| !v.is_finite()) {
                    return Some((tower_name, block_name));
                }
            }
        }
        None
    }
}

/// Accumulate `∂⟨embed(fv), out_grad⟩/∂θ` into `grad` for one tower.
///
/// Contributions add across calls, so batching is a loop over examples.
/// The embedding itself is linear in each parameter for the linear tower;
/// for the MLP the ReLU mask is recomputed from the current parameters.
pub fn backprop(
    params: &DualEncoderParams,
    fv: &FeatureVector,
    kind: TowerKind,
    out_grad: &[f64],
    grad: &mut ParamGradient,
) -> Result<()> {
    params.check_fv(fv)?;
    if out_grad.len() != params.d_emb {
        return Err(Error::DimensionMismatch {
            what: "upstream gradient vs d_emb",
            expected: params.d_emb,
            actual: out_grad.len(),
        });
    }
    match (params.tower(kind), grad.tower_mut(kind)) {
        (TowerWeights::Linear { .. }, TowerWeights::Linear { w, b }) => {
            for &(idx, weight) in fv.entries() {
                for (gw, &g) in w.row_mut(idx as usize).iter_mut().zip(out_grad) {
                    *gw += weight * g;
                }
            }
            for (gb, &g) in b.iter_mut().zip(out_grad) {
                *gb += g;
            }
        }
        (TowerWeights::Mlp { w1, b1, w2, .. }, TowerWeights::Mlp {
            w1: gw1,
            b1: gb1,
            w2: gw2,
            b2: gb2,
        }) => {
            let act = mlp_hidden_activation(w1, b1, fv);
            // Output layer: d out[j] / d w2[k][j] = act[k].
            let mut d_act = vec![0.0; act.len()];
            for (k, &a) in act.iter().enumerate() {
                let grow = gw2.row_mut(k);
                let wrow = w2.row(k);
                let mut da = 0.0;
                for j in 0..out_grad.len() {
                    if a != 0.0 {
                        grow[j] += a * out_grad[j];
                    }
                    da += wrow[j] * out_grad[j];
                }
                d_act[k] = da;
            }
            for (gb, &g) in gb2.iter_mut().zip(out_grad) {
                *gb += g;
            }
            // Hidden layer through the ReLU mask (act > 0 ⇔ pre > 0).
            for (a, d) in act.iter().zip(d_act.iter_mut()) {
                if *a == 0.0 {
                    *d = 0.0;
                }
            }
            for &(idx, weight) in fv.entries() {
                for (gw, &d) in gw1.row_mut(idx as usize).iter_mut().zip(&d_act) {
                    *gw += weight * d;
                }
            }
            for (gb, &d) in gb1.iter_mut().zip(&d_act) {
                *gb += d;
            }
        }
        _ => unreachable!("gradient shape always mirrors parameter shape"),
    }
    Ok(())
}

/// Initialize both towers with Xavier-uniform weights and zero biases.
///
/// Each weight matrix of shape `fan_in × fan_out` is drawn i.i.d. from
/// `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`; draw order is
/// query tower then doc tower, blocks in serialization order, row-major.
/// `hidden` is required (non-zero) for `mlp` and must be 0 for `linear`.
pub fn init_params(
    arch: Arch,
    hash_dim: usize,
    d_emb: usize,
    hidden: usize,
    seed: u64,
) -> Result<DualEncoderParams> {
    if hash_dim == 0 || hash_dim > u32::MAX as usize {
        return Err(Error::InvalidConfig(format!(
            "hash_dim must be in [1, 2^32), got {hash_dim}"
        )));
    }
    if d_emb == 0 {
        return Err(Error::InvalidConfig("d_emb must be >= 1".into()));
    }
    match arch {
        Arch::Linear if hidden != 0 => {
            return Err(Error::InvalidConfig(
                "hidden must be 0 for the linear architecture".into(),
            ))
        }
        Arch::Mlp if hidden == 0 => {
            return Err(Error::InvalidConfig(
                "hidden must be >= 1 for the mlp architecture".into(),
            ))
        }
        _ => {}
    }

    let mut rng = stream_rng(seed, &[crate::hashing::fnv1a_64(b"init-params")]);
    let mut xavier = |fan_in: usize, fan_out: usize| -> Matrix {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut m = Matrix::zeros(fan_in, fan_out);
        for v in m.as_mut_slice() {
            *v = rng.random_range(-a..a);
        }
        m
    };
    let mut tower = || -> TowerWeights {
        match arch {
            Arch::Linear => TowerWeights::Linear {
                w: xavier(hash_dim, d_emb),
                b: vec![0.0; d_emb],
            },
            Arch::Mlp => TowerWeights::Mlp {
                w1: xavier(hash_dim, hidden),
                b1: vec![0.0; hidden],
                w2: xavier(hidden, d_emb),
                b2: vec![0.0; d_emb],
            },
        }
    };
    let query = tower();
    let doc = tower();
    Ok(DualEncoderParams {
        arch,
        hash_dim,
        d_emb,
        hidden,
        query,
        doc,
    })
}

/// Write a checkpoint in the `DNLB` binary format described in the module
/// docs.
pub fn save_checkpoint(params: &DualEncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
    for header in [
        CHECKPOINT_VERSION,
        match params.arch {
            Arch::Linear => 0,
            Arch::Mlp => 1,
        },
        params.hash_dim as u32,
        params.d_emb as u32,
        params.hidden as u32,
    ] {
        w.write_all(&header.to_le_bytes()).map_err(io)?;
    }
    for tower in [&params.query, &params.doc] {
        for (_, block) in tower.blocks() {
            for &v in block {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Read a checkpoint written by [`save_checkpoint`], validating the magic,
/// version, dimensions, and exact payload length.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DualEncoderParams> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "file too short for header"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let mut u32_field = |name: &str| -> Result<u32> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::format(path, format!("truncated header field {name}")))?;
        Ok(u32::from_le_bytes(buf))
    };
    let version = u32_field("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let arch = match u32_field("arch")? {
        0 => Arch::Linear,
        1 => Arch::Mlp,
        other => return Err(Error::format(path, format!("unknown arch tag {other}"))),
    };
    let hash_dim = u32_field("hash_dim")? as usize;
    let d_emb = u32_field("d_emb")? as usize;
    let hidden = u32_field("hidden")? as usize;
    if hash_dim == 0 || d_emb == 0 || (arch == Arch::Mlp) != (hidden > 0) {
        return Err(Error::format(path, "inconsistent header dimensions"));
    }

    let mut params = DualEncoderParams {
        arch,
        hash_dim,
        d_emb,
        hidden,
        query: zeros_tower(arch, hash_dim, d_emb, hidden),
        doc: zeros_tower(arch, hash_dim, d_emb, hidden),
    };
    let mut buf = [0u8; 8];
    for tower in [&mut params.query, &mut params.doc] {
        for (name, block) in tower.blocks_mut() {
            for v in block.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::format(path, format!("truncated block {name}")))?;
                *v = f64::from_le_bytes(buf);
            }
        }
    }
    if r.read(&mut buf).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(path, "trailing bytes after parameter blocks"));
    }
    Ok(params)
}

fn zeros_tower(arch: Arch, hash_dim: usize, d_emb: usize, hidden: usize) -> TowerWeights {
    match arch {
        Arch::Linear => TowerWeights::Linear {
            w: Matrix::zeros(hash_dim, d_emb),
            b: vec![0.0; d_emb],
        },
        Arch::Mlp => TowerWeights::Mlp {
            w1: Matrix::zeros(hash_dim, hidden),
            b1: vec![0.0; hidden],
            w2: Matrix::zeros(hidden, d_emb),
            b2: vec![0.0; d_emb],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::hash_features;
    use rand::Rng;

    fn tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    fn perturbed(params: &DualEncoderParams, kind: TowerKind, flat_idx: usize, eps: f64) -> DualEncoderParams {
        let mut p = params.clone();
        let mut remaining = flat_idx;
        for (_, block) in p.tower_mut(kind).blocks_mut() {
            if remaining < block.len() {
                block[remaining] += eps;
                return p;
            }
            remaining -= block.len();
        }
        panic!("flat index out of range");
    }

    /// Objective used for gradient checks: f(θ) = ⟨embed(fv), g⟩.
    fn objective(params: &DualEncoderParams, fv: &FeatureVector, kind: TowerKind, g: &[f64]) -> f64 {
        dot(&params.embed(fv, kind).unwrap(), g)
    }

    fn gradient_check(arch: Arch, hidden: usize, kind: TowerKind, seed: u64) {
        let hash_dim = 17;
        let d_emb = 5;
        let params = init_params(arch, hash_dim, d_emb, hidden, seed).unwrap();
        let fv = hash_features(&tokens(&["alpha", "beta", "beta", "gamma"]), hash_dim).unwrap();
        let mut rng = crate::hashing::stream_rng(seed, &[99]);
        let g: Vec<f64> = (0..d_emb).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut grad = ParamGradient::zeros_like(&params);
        backprop(&params, &fv, kind, &g, &mut grad).unwrap();

        let analytic: Vec<f64> = match kind {
            TowerKind::Query => &grad.query,
            TowerKind::Doc => &grad.doc,
        }
        .blocks()
        .iter()
        .flat_map(|(_, b)| b.to_vec())
        .collect();

        let eps = 1e-4;
        for (i, &a) in analytic.iter().enumerate() {
            let up = objective(&perturbed(&params, kind, i, eps), &fv, kind, &g);
            let down = objective(&perturbed(&params, kind, i, -eps), &fv, kind, &g);
            let fd = (up - down) / (2.0 * eps);
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "{arch:?}/{kind:?} param {i}: analytic {a} vs fd {fd} (rel {rel})"
            );
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        gradient_check(Arch::Linear, 0, TowerKind::Query, 3);
        gradient_check(Arch::Linear, 0, TowerKind::Doc, 4);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        gradient_check(Arch::Mlp, 7, TowerKind::Query, 5);
        gradient_check(Arch::Mlp, 7, TowerKind::Doc, 6);
    }

    #[test]
    fn embedding_is_linear_in_features_for_linear_arch() {
        let hash_dim = 64;
        let params = init_params(Arch::Linear, hash_dim, 8, 0, 1).unwrap();
        let a = hash_features(&tokens(&["x"]), hash_dim).unwrap();
        let b = hash_features(&tokens(&["x", "x"]), hash_dim).unwrap();
        let ea = params.embed_doc(&a).unwrap();
        let eb = params.embed_doc(&b).unwrap();
        // Doubling the token doubles the embedding minus the bias (zero here).
        for (x, y) in ea.iter().zip(&eb) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn score_is_the_inner_product_and_checks_dims() {
        assert_eq!(score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn init_is_seeded_and_respects_xavier_bound() {
        let a = init_params(Arch::Linear, 32, 4, 0, 9).unwrap();
        let b = init_params(Arch::Linear, 32, 4, 0, 9).unwrap();
        assert_eq!(a, b);
        let c = init_params(Arch::Linear, 32, 4, 0, 10).unwrap();
        assert_ne!(a, c);

        let bound = (6.0f64 / 36.0).sqrt();
        let TowerWeights::Linear { w, b } = &a.query else {
            unreachable!()
        };
        assert!(w.as_slice().iter().all(|v| v.abs() < bound));
        assert!(b.iter().all(|&v| v == 0.0), "biases start at zero");
    }

    #[test]
    fn init_rejects_inconsistent_shapes() {
        assert!(init_params(Arch::Linear, 0, 4, 0, 1).is_err());
        assert!(init_params(Arch::Linear, 8, 0, 0, 1).is_err());
        assert!(init_params(Arch::Linear, 8, 4, 2, 1).is_err());
        assert!(init_params(Arch::Mlp, 8, 4, 0, 1).is_err());
    }

    #[test]
    fn embed_rejects_out_of_range_features() {
        let params = init_params(Arch::Linear, 4, 2, 0, 1).unwrap();
        // hash_dim 64 can produce indices >= 4.
        let fv = hash_features(&tokens(&["q", "w", "e", "r", "t"]), 64).unwrap();
        if fv.max_index().unwrap() >= 4 {
            assert!(params.embed_query(&fv).is_err());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (arch, hidden) in [(Arch::Linear, 0), (Arch::Mlp, 6)] {
            let params = init_params(arch, 19, 4, hidden, 77).unwrap();
            let path = dir.path().join("model.dnlb");
            save_checkpoint(&params, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, params, "{arch:?} round trip must be bit-exact");
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dnlb");
        let params = init_params(Arch::Linear, 8, 3, 0, 1).unwrap();
        save_checkpoint(&params, &path).unwrap();

        // Bad magic.
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Truncated payload.
        save_checkpoint(&params, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_checkpoint(&path).is_err());

        // Trailing bytes.
        save_checkpoint(&params, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
