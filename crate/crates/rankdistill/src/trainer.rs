//! Teacher training, teacher top-K cache generation, and the student
//! distillation loop.
//!
//! The pipeline is strictly two-phase: the teacher trains to convergence
//! first, its top-K ranking over each training query's unlabeled items is
//! cached once, and the student then minimizes
//! `(1 - alpha) * ranking_loss + alpha * distillation_loss` against that
//! frozen cache. Training is single-threaded and fully deterministic given
//! the config seed; negative sampling and rank-estimation draws come from
//! separate generator streams so the ranking-term trajectory does not depend
//! on alpha or the weighting mode.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::losses::{
    combined_loss, distillation_loss, pairwise_loss, pointwise_loss, PairSet,
};
use crate::models::{shuffle, ScoringModel};
use crate::weighting::{effective_weights, RankEstimationInputs, WeightConfig, WeightMode};

/// A teacher's cached ranking of one training query's unlabeled items,
/// scores strictly decreasing with ties broken by ascending item id. Items
/// never intersect the query user's training positives.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKRanking {
    pub query_index: usize,
    pub items: Vec<ItemId>,
    pub teacher_scores: Vec<f64>,
}

/// Which loss supervises the ground-truth ranking term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingLossKind {
    Pointwise,
    Pairwise,
}

/// Hyper-parameters for one training run (teacher or student).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    /// Uniformly sampled unlabeled items per positive in the ranking term.
    pub negatives_per_positive: usize,
    /// Blend between ranking loss (0) and distillation loss (1).
    pub alpha: f64,
    /// Length of the teacher ranking adopted per query.
    pub k: usize,
    pub weighting: WeightConfig,
    pub seed: u64,
    pub ranking_loss: RankingLossKind,
}

impl TrainConfig {
    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("negatives_per_positive must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("K must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        let max_pos = dataset
            .train
            .iter()
            .map(|(ctx, _)| dataset.train_positives[ctx.user].len())
            .max()
            .unwrap_or(0);
        if self.k + max_pos > dataset.num_items {
            return Err(Error::Config(format!(
                "K={} exceeds the smallest unlabeled pool ({} items, {} positives)",
                self.k,
                dataset.num_items,
                max_pos
            )));
        }
        self.weighting.validate()
    }
}

/// Per-epoch log record; one line of `trainlog.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub ranking_loss: f64,
    pub distill_loss: f64,
    pub validation_map: f64,
    pub wall_seconds: f64,
}

/// Result of a training run: the checkpoint from the epoch with the best
/// validation MAP, plus the full log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScoringModel,
    pub best_epoch: usize,
    pub best_validation_map: f64,
    pub log: Vec<EpochLog>,
}

/// Trains a model of dimension `dim` on the ranking loss alone.
pub fn train_teacher(dataset: &Dataset, dim: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    run_training(dataset, dim, config, None)
}

/// Trains a student of dimension `dim` against the teacher's top-K cache
/// using the combined objective. With `alpha = 0` the distillation machinery
/// is fully disabled (including the top-K negative-sampling exclusion, which
/// only exists to avoid contradicting the distillation term), so the run is
/// bit-identical to [`train_teacher`] at the same dimension and seed.
pub fn distill_train(
    dataset: &Dataset,
    teacher_topk: &[TopKRanking],
    dim: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if teacher_topk.len() != dataset.train.len() {
        return Err(Error::Config(format!(
            "top-K cache covers {} queries but the dataset has {} training queries",
            teacher_topk.len(),
            dataset.train.len()
        )));
    }
    for (i, tk) in teacher_topk.iter().enumerate() {
        if tk.query_index != i {
            return Err(Error::Config(format!(
                "top-K cache entry {i} labeled query {}",
                tk.query_index
            )));
        }
    }
    run_training(dataset, dim, config, Some(teacher_topk))
}

fn run_training(
    dataset: &Dataset,
    dim: usize,
    config: &TrainConfig,
    topk: Option<&[TopKRanking]>,
) -> Result<TrainOutcome> {
    config.validate(dataset)?;
    if dim == 0 {
        return Err(Error::Config("model dimension must be >= 1".into()));
    }
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    if dataset.validation.is_empty() {
        return Err(Error::Config(
            "best-epoch selection needs a nonempty validation split".into(),
        ));
    }

    let distill_active = topk.is_some() && config.alpha > 0.0;
    let ranking_active = topk.is_none() || config.alpha < 1.0;
    let dynamic_weights = matches!(
        config.weighting.mode,
        WeightMode::Discrepancy | WeightMode::Hybrid
    );

    let mut model = ScoringModel::init(dataset.num_users, dataset.num_items, dim, config.seed)?;

    // Unlabeled pool per user, ascending item id.
    let mut user_pool: HashMap<UserId, Vec<ItemId>> = HashMap::new();
    for (ctx, _) in &dataset.train {
        user_pool.entry(ctx.user).or_insert_with(|| {
            let positives = &dataset.train_positives[ctx.user];
            (0..dataset.num_items)
                .filter(|i| !positives.contains(i))
                .collect()
        });
    }

    // Negative-sampling universe per query: the unlabeled pool, minus the
    // teacher's picks when the distillation term is live (they are treated
    // as positives there, so using them as negatives would fight it).
    let negative_pool: Vec<Vec<ItemId>> = dataset
        .train
        .iter()
        .enumerate()
        .map(|(qi, (ctx, _))| {
            let pool = &user_pool[&ctx.user];
            if distill_active {
                let banned: std::collections::BTreeSet<ItemId> =
                    topk.unwrap()[qi].items.iter().copied().collect();
                pool.iter().filter(|i| !banned.contains(i)).copied().collect()
            } else {
                pool.clone()
            }
        })
        .collect();
    if let Some((qi, _)) = negative_pool.iter().enumerate().find(|(_, p)| p.is_empty()) {
        return Err(Error::Config(format!(
            "query {qi} has no unlabeled items left to sample negatives from"
        )));
    }

    let val_queries = validation_queries(dataset);
    if val_queries.is_empty() {
        return Err(Error::Config(
            "best-epoch selection needs validation queries with novel targets".into(),
        ));
    }

    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();

    let mut best: Option<(usize, f64, ScoringModel)> = None;
    let mut log = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let t0 = Instant::now();
        shuffle(&mut order, &mut sample_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_ranking = 0.0;
        let mut epoch_distill = 0.0;

        for &qi in &order {
            let (ctx, target) = &dataset.train[qi];

            let ranking_lg = if ranking_active {
                let negs = &negative_pool[qi];
                let chosen: Vec<ItemId> = (0..config.negatives_per_positive)
                    .map(|_| negs[sample_rng.gen_range(0..negs.len())])
                    .collect();
                let pos_score = model.score(ctx, *target)?;
                let neg_scores = model.score_all(ctx, &chosen)?;
                let lg = match config.ranking_loss {
                    RankingLossKind::Pointwise => {
                        let neg: Vec<(ItemId, f64)> =
                            chosen.iter().copied().zip(neg_scores).collect();
                        pointwise_loss(&[(*target, pos_score)], &neg)?
                    }
                    RankingLossKind::Pairwise => {
                        let mut scores: HashMap<ItemId, f64> =
                            chosen.iter().copied().zip(neg_scores).collect();
                        scores.insert(*target, pos_score);
                        let pairs =
                            PairSet::new(chosen.iter().map(|&n| (*target, n)).collect())?;
                        pairwise_loss(&scores, &pairs)?
                    }
                };
                epoch_ranking += lg.value;
                Some(lg)
            } else {
                None
            };

            let distill_lg = if distill_active {
                let tk = &topk.unwrap()[qi];
                let student_scores = model.score_all(ctx, &tk.items)?;
                let weights = if dynamic_weights {
                    let pool = &user_pool[&ctx.user];
                    let inputs = RankEstimationInputs {
                        student: &model,
                        query: ctx,
                        topk_items: &tk.items,
                        topk_scores: &student_scores,
                        pool,
                    };
                    let mut rank_rng = rank_stream(config.seed, epoch, qi);
                    effective_weights(epoch, config.k, &config.weighting, Some(&inputs), &mut rank_rng)?
                } else {
                    let mut unused = rank_stream(config.seed, epoch, qi);
                    effective_weights(epoch, config.k, &config.weighting, None, &mut unused)?
                };
                let lg = distillation_loss(&tk.items, &student_scores, &weights)?;
                epoch_distill += lg.value;
                Some(lg)
            } else {
                None
            };

            let step = match (ranking_lg, distill_lg) {
                (Some(r), Some(d)) => combined_loss(&r, &d, config.alpha)?,
                (Some(r), None) => r,
                (None, Some(d)) => d,
                (None, None) => unreachable!("one loss term is always active"),
            };

            if !step.value.is_finite() {
                return Err(diverged(epoch, best));
            }
            epoch_loss += step.value;
            match model.gradient_step(ctx, &step.grads, config.lr, config.l2) {
                Ok(()) => {}
                Err(Error::Numeric(_)) => return Err(diverged(epoch, best)),
                Err(e) => return Err(e),
            }
        }

        let validation_map = validation_map(&model, &val_queries)?;
        if !validation_map.is_finite() || !epoch_loss.is_finite() {
            return Err(diverged(epoch, best));
        }
        if best.as_ref().map_or(true, |(_, m, _)| validation_map > *m) {
            best = Some((epoch, validation_map, model.clone()));
        }
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss,
            ranking_loss: epoch_ranking,
            distill_loss: epoch_distill,
            validation_map,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
    }

    let (best_epoch, best_validation_map, model) = best.expect("epochs >= 1");
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_validation_map,
        log,
    })
}

fn diverged(epoch: usize, best: Option<(usize, f64, ScoringModel)>) -> Error {
    Error::Diverged {
        epoch,
        best: best.map(|(_, _, m)| Box::new(m)),
    }
}

/// Independent generator stream for the rank estimator, keyed by epoch and
/// query so results do not depend on processing order.
fn rank_stream(seed: u64, epoch: usize, query: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15 ^ (epoch as u64) << 32);
    rng.set_stream(query as u64);
    rng
}

/// Per-user validation query mirroring the held-out evaluation protocol:
/// context is the user's earliest validation window (the training tail),
/// relevant is the set of that user's novel validation targets (items not
/// seen in training), candidates are everything outside the training
/// positives. Selecting epochs on this mirror keeps checkpointing aligned
/// with the metric the test split reports.
struct ValidationQuery {
    context: crate::data::QueryContext,
    candidates: Vec<ItemId>,
    relevant: std::collections::BTreeSet<ItemId>,
}

fn validation_queries(dataset: &Dataset) -> Vec<ValidationQuery> {
    let mut by_user: std::collections::BTreeMap<UserId, ValidationQuery> =
        std::collections::BTreeMap::new();
    for (ctx, target) in &dataset.validation {
        let positives = &dataset.train_positives[ctx.user];
        // Pairs arrive in position order, so the first one per user carries
        // the training-tail context.
        let entry = by_user.entry(ctx.user).or_insert_with(|| ValidationQuery {
            context: ctx.clone(),
            candidates: (0..dataset.num_items)
                .filter(|i| !positives.contains(i))
                .collect(),
            relevant: Default::default(),
        });
        if !positives.contains(target) {
            entry.relevant.insert(*target);
        }
    }
    by_user
        .into_values()
        .filter(|q| !q.relevant.is_empty())
        .collect()
}

/// MAP over the per-user validation queries; compensated summation keeps the
/// mean order-independent.
fn validation_map(model: &ScoringModel, val: &[ValidationQuery]) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Eval(
            "no validation queries with novel targets".into(),
        ));
    }
    let mut sum = crate::eval::KahanSum::new();
    for q in val {
        let ranked = model.rank(&q.context, &q.candidates)?;
        sum.add(crate::eval::average_precision(&ranked, &q.relevant));
    }
    Ok(sum.total() / val.len() as f64)
}

/// Scores every unlabeled item per training query with the teacher and keeps
/// the top `k` by (score descending, item id ascending). Deterministic.
pub fn generate_topk(
    teacher: &ScoringModel,
    dataset: &Dataset,
    k: usize,
) -> Result<Vec<TopKRanking>> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    let mut user_pool: HashMap<UserId, Vec<ItemId>> = HashMap::new();
    let mut out = Vec::with_capacity(dataset.train.len());
    for (qi, (ctx, _)) in dataset.train.iter().enumerate() {
        let pool = user_pool.entry(ctx.user).or_insert_with(|| {
            let positives = &dataset.train_positives[ctx.user];
            (0..dataset.num_items)
                .filter(|i| !positives.contains(i))
                .collect()
        });
        if k > pool.len() {
            return Err(Error::Config(format!(
                "K={k} exceeds the unlabeled pool of {} items for query {qi}",
                pool.len()
            )));
        }
        let scores = teacher.score_all(ctx, pool)?;
        let mut order: Vec<(f64, ItemId)> =
            scores.into_iter().zip(pool.iter().copied()).collect();
        order.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        order.truncate(k);
        out.push(TopKRanking {
            query_index: qi,
            items: order.iter().map(|&(_, i)| i).collect(),
            teacher_scores: order.iter().map(|&(s, _)| s).collect(),
        });
    }
    Ok(out)
}

/// Writes the cache as `topk.tsv`: one line per training query,
/// `query_index \t K \t item:score,item:score,...`, scores in shortest
/// round-trip decimal.
pub fn save_topk(topk: &[TopKRanking], path: &Path) -> Result<()> {
    let mut buf = String::new();
    for tk in topk {
        let _ = write!(buf, "{}\t{}\t", tk.query_index, tk.items.len());
        for (i, (&item, &score)) in tk.items.iter().zip(&tk.teacher_scores).enumerate() {
            if i > 0 {
                buf.push(',');
            }
            let _ = write!(buf, "{item}:{score}");
        }
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a `topk.tsv` written by [`save_topk`]; value-exact round trip.
pub fn load_topk(path: &Path) -> Result<Vec<TopKRanking>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err("expected `query \\t K \\t item:score,...`".into()));
        }
        let query_index: usize = fields[0]
            .parse()
            .map_err(|e| err(format!("bad query index: {e}")))?;
        let k: usize = fields[1].parse().map_err(|e| err(format!("bad K: {e}")))?;
        let mut items = Vec::with_capacity(k);
        let mut teacher_scores = Vec::with_capacity(k);
        for entry in fields[2].split(',') {
            let (item, score) = entry
                .split_once(':')
                .ok_or_else(|| err(format!("bad item:score entry {entry:?}")))?;
            items.push(
                item.parse::<ItemId>()
                    .map_err(|e| err(format!("bad item id: {e}")))?,
            );
            teacher_scores.push(
                score
                    .parse::<f64>()
                    .map_err(|e| err(format!("bad score: {e}")))?,
            );
        }
        if items.len() != k {
            return Err(err(format!("line declares K={k} but has {} entries", items.len())));
        }
        out.push(TopKRanking {
            query_index,
            items,
            teacher_scores,
        });
    }
    Ok(out)
}
