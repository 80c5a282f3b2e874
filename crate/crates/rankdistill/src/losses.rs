//! Ranking and distillation losses, each returning its value and the partial
//! derivatives with respect to the item scores.
//!
//! Losses stop at `dLoss/dscore`; the chain rule through the scoring model is
//! the model's job (`gradient_step`). Sigmoids and log-likelihood terms use
//! softplus identities so values stay finite for scores far into saturation.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::data::ItemId;
use crate::error::{Error, Result};

/// A loss value plus per-item score gradients. Items appear at most once;
/// contributions from repeated items are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    /// `(item, dLoss/dscore_item)`, sorted by ascending item id.
    pub grads: Vec<(ItemId, f64)>,
}

/// Ordered preference pairs: each `(winner, loser)` says the winner should
/// outscore the loser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<(ItemId, ItemId)>,
}

impl PairSet {
    pub fn new(pairs: Vec<(ItemId, ItemId)>) -> Result<Self> {
        for &(w, l) in &pairs {
            if w == l {
                return Err(Error::Config(format!(
                    "preference pair has identical winner and loser {w}"
                )));
            }
        }
        Ok(PairSet { pairs })
    }

    pub fn pairs(&self) -> &[(ItemId, ItemId)] {
        &self.pairs
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `-log(sigmoid(x))`.
fn neg_log_sigmoid(x: f64) -> f64 {
    softplus(-x)
}

fn grads_to_vec(map: BTreeMap<ItemId, f64>) -> Vec<(ItemId, f64)> {
    map.into_iter().collect()
}

/// Negative log-likelihood of binary relevance: positives contribute
/// `-log sigma(score)`, negatives `-log(1 - sigma(score))`. Gradients are
/// `sigma(score) - 1` for positives and `sigma(score)` for negatives.
pub fn pointwise_loss(
    pos_scores: &[(ItemId, f64)],
    neg_scores: &[(ItemId, f64)],
) -> Result<LossGrad> {
    if pos_scores.is_empty() && neg_scores.is_empty() {
        return Err(Error::DegenerateInput(
            "pointwise loss needs at least one scored instance".into(),
        ));
    }
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for &(item, s) in pos_scores {
        value += neg_log_sigmoid(s);
        *grads.entry(item).or_insert(0.0) += sigmoid(s) - 1.0;
    }
    for &(item, s) in neg_scores {
        // -log(1 - sigma(s)) = softplus(s)
        value += softplus(s);
        *grads.entry(item).or_insert(0.0) += sigmoid(s);
    }
    Ok(LossGrad {
        value,
        grads: grads_to_vec(grads),
    })
}

/// Logistic loss over score margins: `-sum log sigma(score_w - score_l)`.
/// Each pair adds `sigma(margin) - 1` to the winner's gradient and the
/// negation to the loser's.
pub fn pairwise_loss(scores: &HashMap<ItemId, f64>, pairs: &PairSet) -> Result<LossGrad> {
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for &(w, l) in pairs.pairs() {
        let sw = *scores.get(&w).ok_or(Error::MissingScore(w))?;
        let sl = *scores.get(&l).ok_or(Error::MissingScore(l))?;
        let margin = sw - sl;
        value += neg_log_sigmoid(margin);
        let g = sigmoid(margin) - 1.0;
        *grads.entry(w).or_insert(0.0) += g;
        *grads.entry(l).or_insert(0.0) -= g;
    }
    Ok(LossGrad {
        value,
        grads: grads_to_vec(grads),
    })
}

/// Weighted point-wise distillation loss over the teacher's top-K items:
/// every ranked item is treated as a positive, weighted by `weights`,
/// `value = -sum_r w_r log sigma(score_r)`. Gradients are
/// `w_r * (sigma(score_r) - 1)`, which is never positive: the teacher's picks
/// only ever get pushed upward.
pub fn distillation_loss(
    topk_items: &[ItemId],
    student_scores: &[f64],
    weights: &[f64],
) -> Result<LossGrad> {
    if student_scores.len() != topk_items.len() || weights.len() != topk_items.len() {
        return Err(Error::Config(format!(
            "distillation loss length mismatch: {} items, {} scores, {} weights",
            topk_items.len(),
            student_scores.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Config(format!(
            "distillation weights must be nonnegative, got {w}"
        )));
    }
    let mut value = 0.0;
    let mut grads = BTreeMap::new();
    for ((&item, &s), &w) in topk_items.iter().zip(student_scores).zip(weights) {
        value += w * neg_log_sigmoid(s);
        *grads.entry(item).or_insert(0.0) += w * (sigmoid(s) - 1.0);
    }
    Ok(LossGrad {
        value,
        grads: grads_to_vec(grads),
    })
}

/// Blends a ranking loss with a distillation loss:
/// `(1 - alpha) * ranking + alpha * distill`, values and per-item gradients
/// alike. At the endpoints the result equals one input exactly.
pub fn combined_loss(ranking: &LossGrad, distill: &LossGrad, alpha: f64) -> Result<LossGrad> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(ranking.clone());
    }
    if alpha == 1.0 {
        return Ok(distill.clone());
    }
    let mut grads = BTreeMap::new();
    for &(item, g) in &ranking.grads {
        *grads.entry(item).or_insert(0.0) += (1.0 - alpha) * g;
    }
    for &(item, g) in &distill.grads {
        *grads.entry(item).or_insert(0.0) += alpha * g;
    }
    Ok(LossGrad {
        value: (1.0 - alpha) * ranking.value + alpha * distill.value,
        grads: grads_to_vec(grads),
    })
}
