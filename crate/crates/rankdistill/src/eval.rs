//! Ranking metrics (Prec@n, nDCG@n, MAP), model-size and latency reporting,
//! and side-by-side comparison tables.
//!
//! Evaluation ranks the full item universe minus each user's already-seen
//! (train + validation) items; the user's unseen test items are the binary
//! relevance labels. Aggregation uses compensated summation so per-query
//! order cannot perturb the means.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, QueryContext};
use crate::error::{Error, Result};
use crate::models::{BaselineModel, ScoringModel};

/// Kahan-Babuska compensated accumulator; the total is independent of the
/// order in which values arrive at f64 precision.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Fraction of the top `n` ranked items that are relevant.
pub fn precision_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("precision cutoff must be >= 1".into()));
    }
    if ranked.len() < n {
        return Err(Error::Eval(format!(
            "ranking has {} items, needs at least {n}",
            ranked.len()
        )));
    }
    let hits = ranked[..n].iter().filter(|i| relevant.contains(i)).count();
    Ok(hits as f64 / n as f64)
}

/// Binary-relevance nDCG at cutoff `n`: gains `1/log2(pos+1)` for relevant
/// items, normalized by the ideal prefix. Zero when nothing is relevant.
pub fn ndcg_at(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Config("nDCG cutoff must be >= 1".into()));
    }
    if ranked.len() < n {
        return Err(Error::Eval(format!(
            "ranking has {} items, needs at least {n}",
            ranked.len()
        )));
    }
    if relevant.is_empty() {
        return Ok(0.0);
    }
    let mut dcg = 0.0;
    for (idx, item) in ranked[..n].iter().enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((idx + 2) as f64).log2();
        }
    }
    let mut idcg = 0.0;
    for idx in 0..n.min(relevant.len()) {
        idcg += 1.0 / ((idx + 2) as f64).log2();
    }
    Ok(dcg / idcg)
}

/// Average precision of one ranking: mean over relevant items of the
/// precision at their positions. Items never retrieved contribute zero while
/// still counting in the denominator.
pub fn average_precision(ranked: &[ItemId], relevant: &BTreeSet<ItemId>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    sum / relevant.len() as f64
}

/// MAP over queries with nonempty relevant sets; queries with nothing
/// relevant are excluded from the mean rather than scored zero.
pub fn mean_average_precision(
    ranked_lists: &[Vec<ItemId>],
    relevant_sets: &[BTreeSet<ItemId>],
) -> Result<f64> {
    if ranked_lists.len() != relevant_sets.len() {
        return Err(Error::Config(format!(
            "{} rankings vs {} relevance sets",
            ranked_lists.len(),
            relevant_sets.len()
        )));
    }
    let mut sum = KahanSum::new();
    let mut evaluable = 0usize;
    for (ranked, relevant) in ranked_lists.iter().zip(relevant_sets) {
        if relevant.is_empty() {
            continue;
        }
        evaluable += 1;
        sum.add(average_precision(ranked, relevant));
    }
    if evaluable == 0 {
        return Err(Error::Eval(
            "no queries with nonempty relevant sets".into(),
        ));
    }
    Ok(sum.total() / evaluable as f64)
}

/// Anything that can rank a candidate list for a query.
pub trait Ranker {
    /// Candidates ordered best-first, ties by ascending item id.
    fn rank_candidates(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<ItemId>>;
    /// Total fitted parameters.
    fn parameter_count(&self) -> Result<usize>;
    /// Parameters in embedding tables (the dimension-scaled term); zero for
    /// memory-based models.
    fn embedding_parameter_count(&self) -> Result<usize>;
}

impl Ranker for ScoringModel {
    fn rank_candidates(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<ItemId>> {
        self.rank(q, candidates)
    }

    fn parameter_count(&self) -> Result<usize> {
        Ok(ScoringModel::parameter_count(self))
    }

    fn embedding_parameter_count(&self) -> Result<usize> {
        Ok(ScoringModel::embedding_parameter_count(self))
    }
}

impl Ranker for BaselineModel {
    fn rank_candidates(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<ItemId>> {
        self.rank(q, candidates)
    }

    fn parameter_count(&self) -> Result<usize> {
        BaselineModel::parameter_count(self)
    }

    fn embedding_parameter_count(&self) -> Result<usize> {
        Ok(0)
    }
}

/// Metrics plus size and latency for one model over one dataset's test split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// prec@{3,5,10}, ndcg@{3,5,10}, map.
    pub metrics: BTreeMap<String, f64>,
    pub parameter_count: usize,
    pub embedding_parameters: usize,
    /// Wall-clock seconds for the full single-threaded inference pass.
    pub inference_seconds: f64,
    pub queries_evaluated: usize,
    pub hardware: String,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> f64 {
        self.metrics.get(name).copied().unwrap_or(f64::NAN)
    }
}

/// Metric cutoffs reported by [`evaluate_model`].
pub const CUTOFFS: [usize; 3] = [3, 5, 10];

/// Evaluates a ranker over the dataset's test queries. Per query the
/// candidate pool is every item the user has not already seen in train or
/// validation, and relevance is the unseen portion of the user's test items.
/// Queries whose relevant set is empty after that filter are skipped; the
/// wall clock covers the whole scoring and ranking pass.
pub fn evaluate_model(model: &dyn Ranker, dataset: &Dataset) -> Result<EvalReport> {
    if dataset.test.is_empty() {
        return Err(Error::Eval("dataset has no test queries".into()));
    }
    let max_cutoff = *CUTOFFS.iter().max().unwrap();

    let mut ranked_lists = Vec::new();
    let mut relevant_sets = Vec::new();
    let t0 = Instant::now();
    for q in &dataset.test {
        let relevant: BTreeSet<ItemId> = q
            .relevant
            .iter()
            .filter(|i| !q.exclude.contains(i))
            .copied()
            .collect();
        if relevant.is_empty() {
            continue;
        }
        let candidates: Vec<ItemId> = (0..dataset.num_items)
            .filter(|i| !q.exclude.contains(i))
            .collect();
        if candidates.len() < max_cutoff {
            return Err(Error::Eval(format!(
                "user {} has only {} candidates, needs {max_cutoff}",
                q.user,
                candidates.len()
            )));
        }
        ranked_lists.push(model.rank_candidates(&q.context, &candidates)?);
        relevant_sets.push(relevant);
    }
    let inference_seconds = t0.elapsed().as_secs_f64();

    if ranked_lists.is_empty() {
        return Err(Error::Eval(
            "no evaluable test queries (all relevant items already seen)".into(),
        ));
    }

    let mut metrics = BTreeMap::new();
    for n in CUTOFFS {
        let mut prec = KahanSum::new();
        let mut ndcg = KahanSum::new();
        for (ranked, relevant) in ranked_lists.iter().zip(&relevant_sets) {
            prec.add(precision_at(ranked, relevant, n)?);
            ndcg.add(ndcg_at(ranked, relevant, n)?);
        }
        let count = ranked_lists.len() as f64;
        metrics.insert(format!("prec@{n}"), prec.total() / count);
        metrics.insert(format!("ndcg@{n}"), ndcg.total() / count);
    }
    metrics.insert(
        "map".into(),
        mean_average_precision(&ranked_lists, &relevant_sets)?,
    );

    Ok(EvalReport {
        metrics,
        parameter_count: model.parameter_count()?,
        embedding_parameters: model.embedding_parameter_count()?,
        inference_seconds,
        queries_evaluated: ranked_lists.len(),
        hardware: format!("{}/{}", std::env::consts::OS, std::env::consts::ARCH),
    })
}

/// One row of a comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub name: String,
    pub metrics: BTreeMap<String, f64>,
    pub parameter_count: usize,
    pub parameter_ratio: f64,
    /// Embedding-table parameters relative to the reference model; NaN when
    /// the reference has none.
    pub embedding_ratio: f64,
    pub inference_seconds: f64,
    pub time_ratio: f64,
}

/// Side-by-side comparison with ratios against a designated reference row.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub reference: String,
    pub rows: Vec<CompareRow>,
}

/// Builds the comparison against the named reference report (typically the
/// teacher). Ratios divide each row's value by the reference's.
pub fn compare(reports: &[(String, EvalReport)], reference: &str) -> Result<ComparisonTable> {
    let (_, base) = reports
        .iter()
        .find(|(name, _)| name == reference)
        .ok_or_else(|| Error::Config(format!("no report named {reference:?} to compare against")))?;
    let base_params = base.parameter_count as f64;
    let base_embed = base.embedding_parameters as f64;
    let base_time = base.inference_seconds;

    let rows = reports
        .iter()
        .map(|(name, r)| CompareRow {
            name: name.clone(),
            metrics: r.metrics.clone(),
            parameter_count: r.parameter_count,
            parameter_ratio: r.parameter_count as f64 / base_params,
            embedding_ratio: if base_embed > 0.0 {
                r.embedding_parameters as f64 / base_embed
            } else {
                f64::NAN
            },
            inference_seconds: r.inference_seconds,
            time_ratio: if base_time > 0.0 {
                r.inference_seconds / base_time
            } else {
                f64::NAN
            },
        })
        .collect();
    Ok(ComparisonTable {
        reference: reference.to_string(),
        rows,
    })
}

fn metric_columns() -> Vec<String> {
    let mut cols: Vec<String> = CUTOFFS.iter().map(|n| format!("prec@{n}")).collect();
    cols.extend(CUTOFFS.iter().map(|n| format!("ndcg@{n}")));
    cols.push("map".into());
    cols
}

impl ComparisonTable {
    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let cols = metric_columns();
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "model");
        for c in &cols {
            let _ = write!(out, " {c:>8}");
        }
        let _ = writeln!(
            out,
            " {:>10} {:>8} {:>8} {:>9} {:>8}",
            "params", "p-ratio", "e-ratio", "time(s)", "t-ratio"
        );
        for row in &self.rows {
            let _ = write!(out, "{:<14}", row.name);
            for c in &cols {
                let _ = write!(out, " {:>8.4}", row.metrics.get(c).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(
                out,
                " {:>10} {:>8.4} {:>8.4} {:>9.4} {:>8.4}",
                row.parameter_count,
                row.parameter_ratio,
                row.embedding_ratio,
                row.inference_seconds,
                row.time_ratio
            );
        }
        out
    }

    /// CSV rendering with the same columns as [`ComparisonTable::to_text`].
    pub fn to_csv(&self) -> String {
        let cols = metric_columns();
        let mut out = String::from("model");
        for c in &cols {
            let _ = write!(out, ",{c}");
        }
        out.push_str(",params,param_ratio,embedding_ratio,time_seconds,time_ratio\n");
        for row in &self.rows {
            let _ = write!(out, "{}", row.name);
            for c in &cols {
                let _ = write!(out, ",{}", row.metrics.get(c).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(
                out,
                ",{},{},{},{},{}",
                row.parameter_count,
                row.parameter_ratio,
                row.embedding_ratio,
                row.inference_seconds,
                row.time_ratio
            );
        }
        out
    }
}
