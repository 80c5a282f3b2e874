//! Weights on the distillation terms.
//!
//! Two families: static position-importance weights (uniform, reciprocal,
//! geometric) and a dynamic ranking-discrepancy weight that compares the
//! student's estimated rank of each teacher-ranked item against the teacher's
//! rank. The hybrid scheme multiplies the two and renormalizes, with the
//! static scheme alone covering a warm-up period while the student's rank
//! estimates are still unreliable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ItemId, QueryContext};
use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::models::ScoringModel;

/// Weighting scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `w_r = 1/K`.
    Uniform,
    /// `w_r` proportional to `1/r`.
    Reciprocal,
    /// `w_r` proportional to `rho * (1 - rho)^r`.
    GeometricRho,
    /// `w_r` proportional to `e^(-r/lambda)`.
    GeometricLambda,
    /// Ranking-discrepancy weight only, normalized.
    Discrepancy,
    /// Position importance (geometric-lambda) times discrepancy, normalized.
    Hybrid,
}

/// All weighting hyper-parameters. Mode-specific fields are optional in the
/// config file; [`WeightConfig::validate`] checks that the chosen mode has
/// what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub mode: WeightMode,
    /// Sharpness of the geometric-lambda distribution; larger is flatter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Geometric-rho success probability, in (0, 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Sharpness of the rescaled tanh in the discrepancy weight.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Sample count for the rank estimator.
    #[serde(default = "default_epsilon")]
    pub epsilon: usize,
    /// Warm-up epochs using position weights only.
    #[serde(default)]
    pub warmup_iters: usize,
}

fn default_epsilon() -> usize {
    50
}

impl WeightConfig {
    pub fn uniform() -> Self {
        WeightConfig {
            mode: WeightMode::Uniform,
            lambda: None,
            rho: None,
            mu: None,
            epsilon: default_epsilon(),
            warmup_iters: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon == 0 {
            return Err(Error::Config("epsilon must be >= 1".into()));
        }
        let need_lambda = matches!(self.mode, WeightMode::GeometricLambda | WeightMode::Hybrid);
        if need_lambda {
            match self.lambda {
                Some(l) if l.is_finite() && l > 0.0 => {}
                other => {
                    return Err(Error::Config(format!(
                        "{:?} mode needs lambda > 0, got {other:?}",
                        self.mode
                    )))
                }
            }
        }
        if self.mode == WeightMode::GeometricRho {
            match self.rho {
                Some(r) if r > 0.0 && r < 1.0 => {}
                other => {
                    return Err(Error::Config(format!(
                        "geometric_rho mode needs rho in (0, 1), got {other:?}"
                    )))
                }
            }
        }
        if matches!(self.mode, WeightMode::Discrepancy | WeightMode::Hybrid) {
            match self.mu {
                Some(m) if m.is_finite() && m > 0.0 => {}
                other => {
                    return Err(Error::Config(format!(
                        "{:?} mode needs mu > 0, got {other:?}",
                        self.mode
                    )))
                }
            }
        }
        Ok(())
    }

    /// The static scheme backing warm-up and the hybrid product: the
    /// configured geometric-lambda for hybrid mode, uniform for pure
    /// discrepancy mode, otherwise the mode itself.
    fn position_mode(&self) -> WeightMode {
        match self.mode {
            WeightMode::Hybrid => WeightMode::GeometricLambda,
            WeightMode::Discrepancy => WeightMode::Uniform,
            m => m,
        }
    }
}

/// Output of the sampled rank estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankEstimate {
    /// Estimated 1-based rank of the target within the pool.
    pub estimated_rank: usize,
    /// Sampled items that outscored the target.
    pub hits: usize,
    /// Samples actually drawn (capped at pool size minus one).
    pub samples_used: usize,
    /// Pool size the estimate refers to.
    pub pool_size: usize,
}

/// Static per-rank weights for positions `1..=k`, normalized to sum 1.
pub fn position_weights(k: usize, config: &WeightConfig) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("need K >= 1 positions".into()));
    }
    config.validate()?;
    let raw: Vec<f64> = match config.position_mode() {
        WeightMode::Uniform => vec![1.0; k],
        WeightMode::Reciprocal => (1..=k).map(|r| 1.0 / r as f64).collect(),
        WeightMode::GeometricRho => {
            let rho = config.rho.unwrap();
            // rho*(1-rho)^r; shift by the first exponent so small rho and
            // large K cannot underflow the leading weights.
            (1..=k).map(|r| (1.0 - rho).powi(r as i32 - 1)).collect()
        }
        WeightMode::GeometricLambda => {
            let lambda = config.lambda.unwrap();
            (1..=k)
                .map(|r| (-((r - 1) as f64) / lambda).exp())
                .collect()
        }
        WeightMode::Discrepancy | WeightMode::Hybrid => unreachable!("mapped to a static mode"),
    };
    let total: f64 = raw.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Numeric(format!(
            "position weights degenerate (sum {total})"
        )));
    }
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Estimates the student's rank of `target` within `pool` by sampling
/// `epsilon` distinct pool items (never the target itself), counting how
/// many the student scores strictly above `target_score`, and extrapolating:
/// `rank = floor(hits * (pool_size - 1) / samples) + 1`.
///
/// With `epsilon >= pool_size - 1` this reproduces the exact strict-greater
/// rank; ties count in the target's favor.
pub fn estimate_rank(
    student: &ScoringModel,
    q: &QueryContext,
    target: ItemId,
    target_score: f64,
    pool: &[ItemId],
    epsilon: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RankEstimate> {
    if pool.is_empty() {
        return Err(Error::Config("rank estimation pool is empty".into()));
    }
    if epsilon == 0 {
        return Err(Error::Config("epsilon must be >= 1".into()));
    }
    let n = pool.len();
    let samples = epsilon.min(n - 1);

    // Index the pool with the target's slot removed so sampling can never
    // pick it.
    let target_pos = pool.iter().position(|&i| i == target);
    let universe = match target_pos {
        Some(_) => n - 1,
        None => n,
    };
    let samples = samples.min(universe);
    if samples == 0 {
        // Pool is only the target; nothing outranks it.
        return Ok(RankEstimate {
            estimated_rank: 1,
            hits: 0,
            samples_used: 0,
            pool_size: n,
        });
    }

    // Partial Fisher-Yates over pool indices, with the target's slot
    // spliced out so it can never be drawn.
    let mut indices: Vec<usize> = (0..universe).collect();
    for t in 0..samples {
        let j = rng.gen_range(t..universe);
        indices.swap(t, j);
    }
    let chosen: Vec<ItemId> = indices[..samples]
        .iter()
        .map(|&i| match target_pos {
            Some(tp) if i >= tp => pool[i + 1],
            _ => pool[i],
        })
        .collect();
    let scores = student.score_all(q, &chosen)?;
    let hits = scores.iter().filter(|s| **s > target_score).count();

    Ok(RankEstimate {
        estimated_rank: hits * (n - 1) / samples + 1,
        hits,
        samples_used: samples,
        pool_size: n,
    })
}

/// Rescaled tanh: `2*sigma(2x) - 1`, mapping `[0, inf)` onto `[0, 1)`.
fn rescaled_tanh(x: f64) -> f64 {
    2.0 * sigmoid(2.0 * x) - 1.0
}

/// Per-position gate from the gap between the student's estimated rank and
/// the teacher's rank `r` (positions `1..=K`):
/// `w_r = tanh(max(mu * (est_r - r), 0))`, mapping into `[0, 1)` (gaps deep
/// in saturation round to 1.0 at f64). Zero whenever the student ranks the
/// item at or above the teacher's position. Not normalized; the hybrid
/// combination owns normalization.
pub fn discrepancy_weights(student_ranks: &[usize], mu: f64) -> Result<Vec<f64>> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Config(format!("mu must be > 0, got {mu}")));
    }
    Ok(student_ranks
        .iter()
        .enumerate()
        .map(|(idx, &est)| {
            let teacher_rank = idx + 1;
            let gap = est as f64 - teacher_rank as f64;
            rescaled_tanh((mu * gap).max(0.0))
        })
        .collect())
}

/// Elementwise product of position and discrepancy weights, normalized to
/// sum 1. If every product is zero (the student already agrees with the
/// teacher everywhere) the result is all zeros: no distillation pressure.
pub fn hybrid_weights(wa: &[f64], wb: &[f64]) -> Result<Vec<f64>> {
    if wa.len() != wb.len() {
        return Err(Error::Config(format!(
            "hybrid weight length mismatch: {} vs {}",
            wa.len(),
            wb.len()
        )));
    }
    if wa.iter().chain(wb).any(|w| !(*w >= 0.0)) {
        return Err(Error::Config(
            "hybrid weight inputs must be nonnegative".into(),
        ));
    }
    let products: Vec<f64> = wa.iter().zip(wb).map(|(a, b)| a * b).collect();
    let total: f64 = products.iter().sum();
    if total == 0.0 {
        return Ok(products);
    }
    Ok(products.into_iter().map(|p| p / total).collect())
}

/// Everything the dynamic schemes need to estimate student ranks for the
/// teacher's top-K items of one query.
pub struct RankEstimationInputs<'a> {
    pub student: &'a ScoringModel,
    pub query: &'a QueryContext,
    /// Teacher's top-K items, best first.
    pub topk_items: &'a [ItemId],
    /// Student scores aligned with `topk_items`.
    pub topk_scores: &'a [f64],
    /// The query's unlabeled pool (contains every top-K item).
    pub pool: &'a [ItemId],
}

/// The weight vector actually applied at a given epoch: static modes and the
/// warm-up period use position weights alone; from `warmup_iters` onward the
/// discrepancy and hybrid modes switch their rank-estimate component on.
pub fn effective_weights(
    iter: usize,
    k: usize,
    config: &WeightConfig,
    inputs: Option<&RankEstimationInputs<'_>>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    config.validate()?;
    let dynamic =
        matches!(config.mode, WeightMode::Discrepancy | WeightMode::Hybrid) && iter >= config.warmup_iters;
    if !dynamic {
        return position_weights(k, config);
    }

    let inputs = inputs.ok_or_else(|| {
        Error::Config("dynamic weighting needs rank estimation inputs".into())
    })?;
    if inputs.topk_items.len() != k || inputs.topk_scores.len() != k {
        return Err(Error::Config(format!(
            "rank estimation inputs cover {} items, expected K={k}",
            inputs.topk_items.len()
        )));
    }
    let mut est = Vec::with_capacity(k);
    for (idx, &item) in inputs.topk_items.iter().enumerate() {
        let e = estimate_rank(
            inputs.student,
            inputs.query,
            item,
            inputs.topk_scores[idx],
            inputs.pool,
            config.epsilon,
            rng,
        )?;
        est.push(e.estimated_rank);
    }
    let wb = discrepancy_weights(&est, config.mu.unwrap())?;

    match config.mode {
        WeightMode::Discrepancy => {
            let total: f64 = wb.iter().sum();
            if total == 0.0 {
                // Student matches the teacher everywhere; fall back to
                // uniform rather than dropping the term entirely.
                Ok(vec![1.0 / k as f64; k])
            } else {
                Ok(wb.into_iter().map(|w| w / total).collect())
            }
        }
        WeightMode::Hybrid => {
            let wa = position_weights(k, config)?;
            hybrid_weights(&wa, &wb)
        }
        _ => unreachable!(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(mode: WeightMode) -> WeightConfig {
        WeightConfig {
            mode,
            lambda: Some(1.0),
            rho: Some(0.3),
            mu: Some(1.0),
            epsilon: 10,
            warmup_iters: 0,
        }
    }

    #[test]
    fn uniform_weights() {
        let w = position_weights(3, &cfg(WeightMode::Uniform)).unwrap();
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn geometric_lambda_matches_hand_normalization() {
        // normalize(e^-1, e^-2, e^-3) ~ [0.66524, 0.24473, 0.09003]
        let w = position_weights(3, &cfg(WeightMode::GeometricLambda)).unwrap();
        assert!((w[0] - 0.66524).abs() < 1e-5, "{w:?}");
        assert!((w[1] - 0.24473).abs() < 1e-5);
        assert!((w[2] - 0.09003).abs() < 1e-5);
    }

    #[test]
    fn huge_lambda_is_uniform() {
        let mut c = cfg(WeightMode::GeometricLambda);
        c.lambda = Some(1e6);
        let w = position_weights(3, &c).unwrap();
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn position_weight_invariants() {
        for mode in [
            WeightMode::Uniform,
            WeightMode::Reciprocal,
            WeightMode::GeometricRho,
            WeightMode::GeometricLambda,
        ] {
            for k in [1usize, 2, 10, 100] {
                let w = position_weights(k, &cfg(mode)).unwrap();
                assert_eq!(w.len(), k);
                assert!(w.iter().all(|x| *x > 0.0), "{mode:?} K={k}");
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "{mode:?} K={k} sum={sum}");
                for pair in w.windows(2) {
                    assert!(pair[0] >= pair[1], "{mode:?} K={k} not non-increasing");
                }
            }
        }
    }

    #[test]
    fn bad_mode_params_rejected() {
        let mut c = cfg(WeightMode::GeometricLambda);
        c.lambda = None;
        assert!(matches!(position_weights(3, &c), Err(Error::Config(_))));
        let mut c = cfg(WeightMode::GeometricRho);
        c.rho = Some(1.5);
        assert!(matches!(position_weights(3, &c), Err(Error::Config(_))));
        assert!(matches!(position_weights(0, &cfg(WeightMode::Uniform)), Err(Error::Config(_))));
    }

    /// Model whose score for item i equals `bias[i]`, so pools can be
    /// crafted with exact scores.
    fn bias_model(scores: &[f64]) -> (ScoringModel, QueryContext) {
        let mut m = ScoringModel::zeroed(1, scores.len(), 1).unwrap();
        m.set_item_bias(scores.to_vec()).unwrap();
        let q = QueryContext {
            user: 0,
            history: vec![0],
        };
        (m, q)
    }

    #[test]
    fn estimate_rank_full_sample_matches_spec_example() {
        // Pool scores {10, 8, 6, 4, 2}, target the item scoring 6, eps = 4:
        // n = 2 above, rank = floor(2*4/4) + 1 = 3.
        let (m, q) = bias_model(&[10.0, 8.0, 6.0, 4.0, 2.0]);
        let pool: Vec<ItemId> = (0..5).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let est = estimate_rank(&m, &q, 2, 6.0, &pool, 4, &mut rng).unwrap();
        assert_eq!(est.hits, 2);
        assert_eq!(est.samples_used, 4);
        assert_eq!(est.estimated_rank, 3);
    }

    #[test]
    fn estimate_rank_top_item_is_rank_one() {
        let (m, q) = bias_model(&[1.0, 2.0, 3.0, 4.0]);
        let pool: Vec<ItemId> = (0..4).collect();
        for eps in [1, 2, 3, 10] {
            let mut rng = ChaCha8Rng::seed_from_u64(eps as u64);
            let est = estimate_rank(&m, &q, 3, 5.0, &pool, eps, &mut rng).unwrap();
            assert_eq!(est.estimated_rank, 1);
            assert_eq!(est.hits, 0);
        }
    }

    #[test]
    fn estimate_rank_exhaustive_equals_sorted_rank() {
        // eps >= pool-1 reproduces the exact strict-greater rank, ties
        // counting for the target.
        use rand::Rng;
        let mut outer = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n: usize = outer.gen_range(2..200);
            let scores: Vec<f64> = (0..n)
                .map(|_| (outer.gen_range(0..20) as f64) / 2.0)
                .collect();
            let (m, q) = bias_model(&scores);
            let pool: Vec<ItemId> = (0..n).collect();
            let target = outer.gen_range(0..n);
            let ts = scores[target];
            let true_rank = scores.iter().filter(|s| **s > ts).count() + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(trial);
            let est = estimate_rank(&m, &q, target, ts, &pool, n - 1, &mut rng).unwrap();
            assert_eq!(est.estimated_rank, true_rank, "trial {trial}");
        }
    }

    #[test]
    fn estimate_rank_never_samples_target() {
        // With a pool of two, the only sampleable item is the non-target.
        let (m, q) = bias_model(&[5.0, 1.0]);
        let pool = vec![0, 1];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let est = estimate_rank(&m, &q, 1, 1.0, &pool, 1, &mut rng).unwrap();
            assert_eq!(est.hits, 1, "must have sampled item 0");
            assert_eq!(est.estimated_rank, 2);
        }
    }

    #[test]
    fn estimate_rank_empty_pool_rejected() {
        let (m, q) = bias_model(&[1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            estimate_rank(&m, &q, 0, 1.0, &[], 1, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn discrepancy_zero_when_student_agrees() {
        let w = discrepancy_weights(&[1, 2, 3], 1.0).unwrap();
        assert_eq!(w, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn discrepancy_unit_gap_value() {
        // mu*(est - r) = 1 -> 2*sigma(2) - 1 ~ 0.761594
        let w = discrepancy_weights(&[2], 1.0).unwrap();
        assert!((w[0] - 0.7615941559557649).abs() < 1e-12);
    }

    #[test]
    fn discrepancy_clamps_when_student_ranks_higher() {
        // Student rank 1 at teacher position 3: gap negative, clamped to 0.
        let w = discrepancy_weights(&[1, 1, 1], 2.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn discrepancy_range_and_mu_validation() {
        // Moderate gaps stay strictly inside [0, 1); the weight is zero
        // exactly when the estimated rank does not trail the teacher's.
        let w = discrepancy_weights(&[14, 1, 8], 1.0).unwrap();
        assert!(w.iter().all(|x| (0.0..1.0).contains(x) || *x == 0.0));
        assert!(w[0] > 0.0 && w[2] > 0.0);
        assert_eq!(w[1], 0.0);
        // Far into saturation the f64 tanh rounds to exactly 1.
        let sat = discrepancy_weights(&[1000], 5.0).unwrap();
        assert_eq!(sat[0], 1.0);
        assert!(matches!(
            discrepancy_weights(&[1], 0.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            discrepancy_weights(&[1], -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hybrid_neutral_discrepancy_returns_wa() {
        let wa = position_weights(4, &cfg(WeightMode::GeometricLambda)).unwrap();
        let w = hybrid_weights(&wa, &[1.0; 4]).unwrap();
        for (a, b) in wa.iter().zip(&w) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hybrid_hand_example() {
        let w = hybrid_weights(&[0.5, 0.3, 0.2], &[0.0, 1.0, 1.0]).unwrap();
        assert!((w[0] - 0.0).abs() < 1e-15);
        assert!((w[1] - 0.6).abs() < 1e-12);
        assert!((w[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn hybrid_all_zero_gate_gives_zero_vector() {
        let w = hybrid_weights(&[0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(w, vec![0.0, 0.0]);
    }

    #[test]
    fn hybrid_length_mismatch_rejected() {
        assert!(matches!(
            hybrid_weights(&[0.5], &[0.5, 0.5]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn effective_weights_warmup_boundary() {
        // Build a situation where the student disagrees with the teacher so
        // the hybrid output differs from pure position weights.
        let (m, q) = bias_model(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let pool: Vec<ItemId> = (0..6).collect();
        let topk = vec![0usize, 1, 2]; // teacher prefers low ids, student high
        let scores = m.score_all(&q, &topk).unwrap();
        let mut c = cfg(WeightMode::Hybrid);
        c.warmup_iters = 10;
        c.epsilon = 5;
        let inputs = RankEstimationInputs {
            student: &m,
            query: &q,
            topk_items: &topk,
            topk_scores: &scores,
            pool: &pool,
        };
        let position = position_weights(3, &c).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let during = effective_weights(9, 3, &c, Some(&inputs), &mut rng).unwrap();
        assert_eq!(during, position, "iter < m must use position weights");

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let after = effective_weights(10, 3, &c, Some(&inputs), &mut rng).unwrap();
        assert_ne!(after, position, "hybrid active from iter = m onward");
        let sum: f64 = after.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12 || sum == 0.0);
    }

    #[test]
    fn effective_weights_static_mode_ignores_iteration() {
        let c = cfg(WeightMode::Uniform);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for iter in [0, 5, 500] {
            let w = effective_weights(iter, 4, &c, None, &mut rng).unwrap();
            assert_eq!(w, vec![0.25; 4]);
        }
    }
}
