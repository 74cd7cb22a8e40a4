//! Pairwise training losses and their score-level gradients.
//!
//! Everything here is expressed over *scores*, not parameters: a pair
//! `(s_pos, s_neg)` yields a loss plus `∂L/∂s_pos` and `∂L/∂s_neg`, and the
//! trainer chains those into tower gradients with
//! [`crate::encoder::backprop`]. Four views of the same pairwise idea:
//!
//! * [`indicator_loss`] — the 0/1 misordering count (evaluation only, not
//!   differentiable). It is tie-extended with the document-id comparator so
//!   rank arithmetic built on it is exact even with duplicate scores.
//! * [`ranknet_loss`] — the smooth surrogate `log(1 + e^{s_neg − s_pos})`
//!   in a numerically stable form.
//! * [`lambda_loss`] — RankNet scaled by a non-negative pair weight,
//!   typically a metric delta from [`delta_metric`]; the weight is a
//!   constant (no gradient flows through it).
//! * [`star_objective`] — `α · Σ ranknet(random) + Σ ranknet(static)`,
//!   the two-term objective that mixes cheap random pairs with hard pairs
//!   from a static pool.

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, QueryRelevance};
use crate::error::{Error, Result};
use crate::eval::{metric_over_list, GainScheme, Metric};
use crate::index::rank_order;

/// One scored training pair: a positive and a negative document for the
/// same query, with a non-negative loss weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairItem {
    pub qid: String,
    pub positive: DocId,
    pub negative: DocId,
    pub s_pos: f64,
    pub s_neg: f64,
    /// Loss weight (1 for plain RankNet, a metric delta for lambda pairs).
    pub weight: f64,
}

/// A full ranking snapshot: `(doc, score)` pairs already ordered by the
/// canonical comparator (score descending, ties by ascending id).
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    items: Vec<(DocId, f64)>,
}

impl RankedList {
    /// Wrap an already-ranked list (e.g. straight from an index search),
    /// validating the comparator order and id uniqueness.
    pub fn new(items: Vec<(DocId, f64)>) -> Result<Self> {
        for pair in items.windows(2) {
            if rank_order(&pair[0], &pair[1]) != std::cmp::Ordering::Less {
                return Err(Error::InvalidConfig(
                    "ranked list is not in comparator order".into(),
                ));
            }
        }
        Ok(RankedList { items })
    }

    /// Rank arbitrary `(doc, score)` pairs with the canonical comparator.
    /// Duplicate ids are rejected.
    pub fn from_unsorted(mut items: Vec<(DocId, f64)>) -> Result<Self> {
        items.sort_unstable_by(rank_order);
        for pair in items.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidConfig(format!(
                    "duplicate document {} in ranked list",
                    pair[0].0
                )));
            }
        }
        RankedList::new(items)
    }

    pub fn items(&self) -> &[(DocId, f64)] {
        &self.items
    }

    pub fn ids(&self) -> Vec<DocId> {
        self.items.iter().map(|&(id, _)| id).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 0-based position of a document, if present.
    pub fn position(&self, id: DocId) -> Option<usize> {
        self.items.iter().position(|&(d, _)| d == id)
    }
}

/// 1 iff the negative outranks the positive under the canonical
/// comparator: strictly higher score, or an equal score with a smaller id.
///
/// The id tie-break is what makes `rank = preceding-relevant-count + 1 +
/// Σ indicator` an exact identity rather than an approximation.
pub fn indicator_loss(s_pos: f64, s_neg: f64, id_pos: DocId, id_neg: DocId) -> f64 {
    if rank_order(&(id_neg, s_neg), &(id_pos, s_pos)) == std::cmp::Ordering::Less {
        1.0
    } else {
        0.0
    }
}

/// RankNet loss and score gradients for one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RanknetGrad {
    pub loss: f64,
    pub d_s_pos: f64,
    pub d_s_neg: f64,
}

impl RanknetGrad {
    /// Scale loss and both gradients by a constant.
    fn scaled(self, c: f64) -> RanknetGrad {
        RanknetGrad {
            loss: c * self.loss,
            d_s_pos: c * self.d_s_pos,
            d_s_neg: c * self.d_s_neg,
        }
    }
}

/// Logistic function, computed without overflow on either tail.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^{s_neg − s_pos})` with its score gradients.
///
/// Stable at any margin: with `x = s_pos − s_neg`, the loss is
/// `log1p(e^{−x})` for `x ≥ 0` and `−x + log1p(e^{x})` otherwise, so a
/// margin of ±700 neither overflows nor loses the linear tail. Gradients
/// are `∓σ(s_neg − s_pos)` and always sum to zero exactly.
pub fn ranknet_loss(s_pos: f64, s_neg: f64) -> RanknetGrad {
    let x = s_pos - s_neg;
    let loss = if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    };
    let s = sigmoid(-x);
    RanknetGrad {
        loss,
        d_s_pos: -s,
        d_s_neg: s,
    }
}

/// Weight-scaled RankNet for one pair: `weight · ranknet(s_pos, s_neg)`.
///
/// The weight (typically a metric delta) is treated as a constant, so the
/// gradients are the plain RankNet gradients scaled by it; a zero weight
/// makes the pair inert. Negative or non-finite weights are errors.
pub fn lambda_loss(pair: &PairItem) -> Result<RanknetGrad> {
    if !pair.weight.is_finite() || pair.weight < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "pair weight must be finite and >= 0, got {} (query {})",
            pair.weight, pair.qid
        )));
    }
    Ok(ranknet_loss(pair.s_pos, pair.s_neg).scaled(pair.weight))
}

/// How much a truncated metric changes when two documents of a ranked
/// list exchange positions: `|M_after − M_before|`.
///
/// Only position-sensitive metrics make sense here, so `metric` must be
/// MRR@k or NDCG@k; both ids must be present in the list.
pub fn delta_metric(
    list: &RankedList,
    pos_id: DocId,
    neg_id: DocId,
    metric: Metric,
    rel: &QueryRelevance,
    gain: GainScheme,
) -> Result<f64> {
    if matches!(metric, Metric::Recall { .. }) {
        return Err(Error::InvalidConfig(
            "metric deltas are defined for mrr@k and ndcg@k only".into(),
        ));
    }
    let p = list
        .position(pos_id)
        .ok_or_else(|| Error::UnknownDocument(format!("{pos_id} (not in ranked list)")))?;
    let n = list
        .position(neg_id)
        .ok_or_else(|| Error::UnknownDocument(format!("{neg_id} (not in ranked list)")))?;
    let mut ids = list.ids();
    let before = metric_over_list(metric, &ids, rel, gain);
    ids.swap(p, n);
    let after = metric_over_list(metric, &ids, rel, gain);
    Ok((after - before).abs())
}

/// Loss and per-pair score gradients of the two-term mixed objective.
///
/// Gradients are returned already scaled — `random_grads` carry the `α·`
/// factor (and each pair's own weight), so callers apply them uniformly.
#[derive(Clone, Debug)]
pub struct StarLoss {
    pub loss: f64,
    pub random_grads: Vec<RanknetGrad>,
    pub static_grads: Vec<RanknetGrad>,
}

/// `α · Σ lambda(random) + Σ lambda(static)` with `α ∈ (0, 1)` exclusive —
/// the random term is a regularizer and must stay strictly fractional.
pub fn star_objective(
    random_pairs: &[PairItem],
    static_pairs: &[PairItem],
    alpha: f64,
) -> Result<StarLoss> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie strictly inside (0, 1), got {alpha}"
        )));
    }
    let mut loss = 0.0;
    let mut random_grads = Vec::with_capacity(random_pairs.len());
    for pair in random_pairs {
        let g = lambda_loss(pair)?.scaled(alpha);
        loss += g.loss;
        random_grads.push(g);
    }
    let mut static_grads = Vec::with_capacity(static_pairs.len());
    for pair in static_pairs {
        let g = lambda_loss(pair)?;
        loss += g.loss;
        static_grads.push(g);
    }
    Ok(StarLoss {
        loss,
        random_grads,
        static_grads,
    })
}
