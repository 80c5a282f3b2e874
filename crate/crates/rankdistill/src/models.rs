//! Scoring models with explicit analytic gradients.
//!
//! The main model is a sequential latent-factor scorer usable at teacher and
//! student sizes: the relevance of item `i` to a query is
//!
//! ```text
//! score(q, i) = (u_q + mean of history item embeddings) . v_i + b_i
//! ```
//!
//! with separate item embedding tables for the history side (`p`) and the
//! target side (`v`). Mean pooling keeps the gradients hand-checkable and the
//! model agnostic to history order. POP, ItemCF, and BPR baselines live here
//! too.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ItemId, QueryContext, UserId};
use crate::error::{Error, Result};

/// Latent-factor parameter container. Instantiated at teacher dimension or
/// student dimension; everything else is identical between the two.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub seed: u64,
    user_embeddings: Vec<f64>,
    item_in_embeddings: Vec<f64>,
    item_out_embeddings: Vec<f64>,
    item_bias: Vec<f64>,
}

const INIT_SCALE: f64 = 0.01;

impl ScoringModel {
    /// Creates a model with embeddings drawn uniformly from
    /// `[-0.01, 0.01]` by a generator seeded with `seed`; biases start at
    /// zero. The same seed always produces the same model.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be >= 1".into()));
        }
        if num_users == 0 || num_items == 0 {
            return Err(Error::Config(
                "model needs at least one user and one item".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
                .collect()
        };
        Ok(ScoringModel {
            num_users,
            num_items,
            dim,
            seed,
            user_embeddings: draw(num_users * dim),
            item_in_embeddings: draw(num_items * dim),
            item_out_embeddings: draw(num_items * dim),
            item_bias: vec![0.0; num_items],
        })
    }

    /// Total number of parameters: `d*(num_users + 2*num_items) + num_items`.
    pub fn parameter_count(&self) -> usize {
        self.dim * (self.num_users + 2 * self.num_items) + self.num_items
    }

    /// Embedding parameters only (excludes the bias vector); this is the term
    /// that scales linearly with the dimension.
    pub fn embedding_parameter_count(&self) -> usize {
        self.dim * (self.num_users + 2 * self.num_items)
    }

    fn check_query(&self, q: &QueryContext) -> Result<()> {
        if q.user >= self.num_users {
            return Err(Error::IndexOutOfRange(format!(
                "user {} >= num_users {}",
                q.user, self.num_users
            )));
        }
        for &h in &q.history {
            if h >= self.num_items {
                return Err(Error::IndexOutOfRange(format!(
                    "history item {} >= num_items {}",
                    h, self.num_items
                )));
            }
        }
        Ok(())
    }

    fn user_vec(&self, user: UserId) -> &[f64] {
        &self.user_embeddings[user * self.dim..(user + 1) * self.dim]
    }

    fn in_vec(&self, item: ItemId) -> &[f64] {
        &self.item_in_embeddings[item * self.dim..(item + 1) * self.dim]
    }

    fn out_vec(&self, item: ItemId) -> &[f64] {
        &self.item_out_embeddings[item * self.dim..(item + 1) * self.dim]
    }

    /// The pooled context vector `h = u_q + mean of history embeddings`.
    /// History items are accumulated in sorted order so the score is
    /// bit-identical under any permutation of the window.
    fn context_vector(&self, q: &QueryContext) -> Vec<f64> {
        let mut h = self.user_vec(q.user).to_vec();
        if !q.history.is_empty() {
            let mut ordered = q.history.clone();
            ordered.sort_unstable();
            let inv = 1.0 / ordered.len() as f64;
            for &item in &ordered {
                let p = self.in_vec(item);
                for (hd, pd) in h.iter_mut().zip(p) {
                    *hd += inv * pd;
                }
            }
        }
        h
    }

    fn dot_item(&self, h: &[f64], item: ItemId) -> f64 {
        let v = self.out_vec(item);
        let mut s = self.item_bias[item];
        for (hd, vd) in h.iter().zip(v) {
            s += hd * vd;
        }
        s
    }

    /// Relevance score of one item for a query.
    pub fn score(&self, q: &QueryContext, item: ItemId) -> Result<f64> {
        self.check_query(q)?;
        if item >= self.num_items {
            return Err(Error::IndexOutOfRange(format!(
                "item {} >= num_items {}",
                item, self.num_items
            )));
        }
        let h = self.context_vector(q);
        Ok(self.dot_item(&h, item))
    }

    /// Scores a candidate list in one pass. Elementwise identical to
    /// [`ScoringModel::score`]: the context vector is computed once and each
    /// candidate takes the same dot-product path.
    pub fn score_all(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<f64>> {
        self.check_query(q)?;
        for &item in candidates {
            if item >= self.num_items {
                return Err(Error::IndexOutOfRange(format!(
                    "item {} >= num_items {}",
                    item, self.num_items
                )));
            }
        }
        let h = self.context_vector(q);
        Ok(candidates.iter().map(|&i| self.dot_item(&h, i)).collect())
    }

    /// Applies one SGD step given per-item loss gradients `dLoss/dscore`.
    ///
    /// With `h` the pre-update context vector and `v_pre` the pre-update
    /// target embeddings, the update is
    ///
    /// ```text
    /// v_i <- v_i - lr*(g_i*h + l2*v_i)
    /// b_i <- b_i - lr*(g_i + l2*b_i)
    /// u_q <- u_q - lr*(sum_i g_i*v_i_pre + l2*u_q)
    /// p_l <- p_l - lr*((1/L)*sum_i g_i*v_i_pre + l2*p_l)   per history slot
    /// ```
    ///
    /// A history item occupying several slots receives one update per slot.
    /// If any update would be non-finite the model is left unchanged.
    pub fn gradient_step(
        &mut self,
        q: &QueryContext,
        grads: &[(ItemId, f64)],
        lr: f64,
        l2: f64,
    ) -> Result<()> {
        self.check_query(q)?;
        for &(item, g) in grads {
            if item >= self.num_items {
                return Err(Error::IndexOutOfRange(format!(
                    "item {} >= num_items {}",
                    item, self.num_items
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for item {item}")));
            }
        }
        if !(lr.is_finite() && lr >= 0.0 && l2.is_finite() && l2 >= 0.0) {
            return Err(Error::Config(format!(
                "lr and l2 must be finite and nonnegative, got lr={lr} l2={l2}"
            )));
        }

        let d = self.dim;
        let h = self.context_vector(q);

        // sum_i g_i * v_i_pre, taken before any table is touched.
        let mut gv = vec![0.0; d];
        for &(item, g) in grads {
            let v = self.out_vec(item);
            for (acc, vd) in gv.iter_mut().zip(v) {
                *acc += g * vd;
            }
        }

        // Stage every new value, commit only if all are finite.
        let mut new_out: Vec<(ItemId, Vec<f64>, f64)> = Vec::with_capacity(grads.len());
        for &(item, g) in grads {
            let v = self.out_vec(item);
            let nv: Vec<f64> = v
                .iter()
                .zip(&h)
                .map(|(vd, hd)| vd - lr * (g * hd + l2 * vd))
                .collect();
            let nb = self.item_bias[item] - lr * (g + l2 * self.item_bias[item]);
            new_out.push((item, nv, nb));
        }

        let u = self.user_vec(q.user);
        let new_user: Vec<f64> = u
            .iter()
            .zip(&gv)
            .map(|(ud, gvd)| ud - lr * (gvd + l2 * ud))
            .collect();

        // History slots update sequentially; a repeated item's later slot
        // sees the value produced by its earlier slot.
        let inv = if q.history.is_empty() {
            0.0
        } else {
            1.0 / q.history.len() as f64
        };
        let mut staged_in: std::collections::BTreeMap<ItemId, Vec<f64>> =
            std::collections::BTreeMap::new();
        for &slot in &q.history {
            let current = staged_in
                .entry(slot)
                .or_insert_with(|| self.in_vec(slot).to_vec());
            for (pd, gvd) in current.iter_mut().zip(&gv) {
                *pd -= lr * (inv * gvd + l2 * *pd);
            }
        }

        let finite = new_out
            .iter()
            .all(|(_, nv, nb)| nb.is_finite() && nv.iter().all(|x| x.is_finite()))
            && new_user.iter().all(|x| x.is_finite())
            && staged_in
                .values()
                .all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::Numeric(
                "gradient step would produce non-finite parameters; model unchanged".into(),
            ));
        }

        for (item, nv, nb) in new_out {
            self.item_out_embeddings[item * d..(item + 1) * d].copy_from_slice(&nv);
            self.item_bias[item] = nb;
        }
        self.user_embeddings[q.user * d..(q.user + 1) * d].copy_from_slice(&new_user);
        for (item, nv) in staged_in {
            self.item_in_embeddings[item * d..(item + 1) * d].copy_from_slice(&nv);
        }
        Ok(())
    }

    /// Ranks `candidates` by descending score, ties broken by ascending
    /// item id.
    pub fn rank(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<ItemId>> {
        let scores = self.score_all(q, candidates)?;
        let mut order: Vec<(f64, ItemId)> = scores.into_iter().zip(candidates.iter().copied()).collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(order.into_iter().map(|(_, i)| i).collect())
    }

    /// Flat view of all parameters in checkpoint order (user, item_in,
    /// item_out, bias). Used by tests and finite-difference probes.
    pub fn parameters(&self) -> Vec<f64> {
        let mut all =
            Vec::with_capacity(self.parameter_count());
        all.extend_from_slice(&self.user_embeddings);
        all.extend_from_slice(&self.item_in_embeddings);
        all.extend_from_slice(&self.item_out_embeddings);
        all.extend_from_slice(&self.item_bias);
        all
    }

    /// Mutable access to one parameter by its flat checkpoint-order index.
    pub fn parameter_mut(&mut self, index: usize) -> &mut f64 {
        let nu = self.user_embeddings.len();
        let ni = self.item_in_embeddings.len();
        let no = self.item_out_embeddings.len();
        if index < nu {
            &mut self.user_embeddings[index]
        } else if index < nu + ni {
            &mut self.item_in_embeddings[index - nu]
        } else if index < nu + ni + no {
            &mut self.item_out_embeddings[index - nu - ni]
        } else {
            &mut self.item_bias[index - nu - ni - no]
        }
    }

    /// Writes `model.json` + `params.bin` (little-endian f64, row-major
    /// tables in order: user, item_in, item_out, bias) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = CheckpointMeta {
            num_users: self.num_users,
            num_items: self.num_items,
            dim: self.dim,
            seed: self.seed,
        };
        let meta_path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Numeric(format!("checkpoint meta: {e}")))?;
        fs::write(&meta_path, json + "\n").map_err(|e| Error::io(meta_path.clone(), e))?;

        let mut bytes = Vec::with_capacity(self.parameter_count() * 8);
        for table in [
            &self.user_embeddings,
            &self.item_in_embeddings,
            &self.item_out_embeddings,
            &self.item_bias,
        ] {
            for &x in table.iter() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let bin_path = dir.join("params.bin");
        fs::write(&bin_path, bytes).map_err(|e| Error::io(bin_path.clone(), e))
    }

    /// Loads a checkpoint directory written by [`ScoringModel::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("model.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(meta_path.clone(), e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: meta_path.clone(),
            line: 1,
            msg: e.to_string(),
        })?;
        let bin_path = dir.join("params.bin");
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(bin_path.clone(), e))?;
        let expect = (meta.dim * (meta.num_users + 2 * meta.num_items) + meta.num_items) * 8;
        if bytes.len() != expect {
            return Err(Error::Parse {
                path: bin_path,
                line: 0,
                msg: format!("params.bin has {} bytes, expected {expect}", bytes.len()),
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };
        Ok(ScoringModel {
            num_users: meta.num_users,
            num_items: meta.num_items,
            dim: meta.dim,
            seed: meta.seed,
            user_embeddings: take(meta.num_users * meta.dim),
            item_in_embeddings: take(meta.num_items * meta.dim),
            item_out_embeddings: take(meta.num_items * meta.dim),
            item_bias: take(meta.num_items),
        })
    }

    /// Test/bench helper: overwrite the bias vector so that scores equal a
    /// chosen per-item value when all embeddings are zero.
    pub fn set_item_bias(&mut self, bias: Vec<f64>) -> Result<()> {
        if bias.len() != self.num_items {
            return Err(Error::Config(format!(
                "bias length {} != num_items {}",
                bias.len(),
                self.num_items
            )));
        }
        self.item_bias = bias;
        Ok(())
    }

    /// Test helper: a model whose parameters are all zero.
    pub fn zeroed(num_users: usize, num_items: usize, dim: usize) -> Result<Self> {
        let mut m = Self::init(num_users, num_items, dim, 0)?;
        m.user_embeddings.iter_mut().for_each(|x| *x = 0.0);
        m.item_in_embeddings.iter_mut().for_each(|x| *x = 0.0);
        m.item_out_embeddings.iter_mut().for_each(|x| *x = 0.0);
        m.item_bias.iter_mut().for_each(|x| *x = 0.0);
        Ok(m)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    num_users: usize,
    num_items: usize,
    dim: usize,
    seed: u64,
}

/// Non-sequential reference rankers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Pop,
    ItemCf,
    Bpr,
}

#[derive(Debug, Clone)]
enum BaselineState {
    Pop {
        freq: Vec<u64>,
    },
    ItemCf {
        /// Per item: up to k (neighbor, jaccard) entries, similarity
        /// descending, ties by ascending item id.
        neighbors: Vec<Vec<(ItemId, f64)>>,
    },
    Bpr {
        dim: usize,
        user_embeddings: Vec<f64>,
        item_embeddings: Vec<f64>,
        item_bias: Vec<f64>,
    },
}

/// BPR training hyper-parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BprConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            dim: 16,
            epochs: 20,
            lr: 0.05,
            l2: 1e-4,
        }
    }
}

/// A baseline ranker. Construct with [`BaselineModel::new`], then call
/// [`BaselineModel::fit`] before ranking.
#[derive(Debug, Clone)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    num_items: usize,
    state: Option<BaselineState>,
}

/// Default neighborhood size for ItemCF.
pub const ITEMCF_DEFAULT_NEIGHBORS: usize = 20;

impl BaselineModel {
    pub fn new(kind: BaselineKind) -> Self {
        BaselineModel {
            kind,
            num_items: 0,
            state: None,
        }
    }

    /// Fits the baseline on the dataset's training view: item frequency over
    /// training targets for POP, Jaccard similarity over per-user training
    /// item sets for ItemCF (top `neighbors` kept), and SGD over
    /// (user, target) pairs for BPR.
    pub fn fit(
        &mut self,
        dataset: &Dataset,
        neighbors: usize,
        bpr: &BprConfig,
        seed: u64,
    ) -> Result<()> {
        self.num_items = dataset.num_items;
        self.state = Some(match self.kind {
            BaselineKind::Pop => {
                let mut freq = vec![0u64; dataset.num_items];
                for (_, target) in &dataset.train {
                    freq[*target] += 1;
                }
                BaselineState::Pop { freq }
            }
            BaselineKind::ItemCf => {
                if neighbors == 0 {
                    return Err(Error::Config("ItemCF neighbor count must be >= 1".into()));
                }
                BaselineState::ItemCf {
                    neighbors: itemcf_neighbors(dataset, neighbors),
                }
            }
            BaselineKind::Bpr => fit_bpr(dataset, bpr, seed)?,
        });
        Ok(())
    }

    /// Ranks candidates by the fitted scoring rule, ties broken by ascending
    /// item id.
    pub fn rank(&self, q: &QueryContext, candidates: &[ItemId]) -> Result<Vec<ItemId>> {
        let state = self.state.as_ref().ok_or_else(|| {
            Error::NotFitted(format!("{:?} baseline used before fit()", self.kind))
        })?;
        for &item in candidates {
            if item >= self.num_items {
                return Err(Error::IndexOutOfRange(format!(
                    "item {} >= num_items {}",
                    item, self.num_items
                )));
            }
        }
        let mut scored: Vec<(f64, ItemId)> = match state {
            BaselineState::Pop { freq } => candidates
                .iter()
                .map(|&i| (freq[i] as f64, i))
                .collect(),
            BaselineState::ItemCf { neighbors } => {
                let history: BTreeSet<ItemId> = q.history.iter().copied().collect();
                candidates
                    .iter()
                    .map(|&i| {
                        let s: f64 = neighbors[i]
                            .iter()
                            .filter(|(j, _)| history.contains(j))
                            .map(|(_, sim)| sim)
                            .sum();
                        (s, i)
                    })
                    .collect()
            }
            BaselineState::Bpr {
                dim,
                user_embeddings,
                item_embeddings,
                item_bias,
            } => {
                let u = &user_embeddings[q.user * dim..(q.user + 1) * dim];
                candidates
                    .iter()
                    .map(|&i| {
                        let v = &item_embeddings[i * dim..(i + 1) * dim];
                        let s = item_bias[i]
                            + u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
                        (s, i)
                    })
                    .collect()
            }
        };
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().map(|(_, i)| i).collect())
    }

    /// Number of fitted parameters, for size comparisons.
    pub fn parameter_count(&self) -> Result<usize> {
        let state = self.state.as_ref().ok_or_else(|| {
            Error::NotFitted(format!("{:?} baseline used before fit()", self.kind))
        })?;
        Ok(match state {
            BaselineState::Pop { freq } => freq.len(),
            BaselineState::ItemCf { neighbors } => {
                neighbors.iter().map(|n| 2 * n.len()).sum()
            }
            BaselineState::Bpr {
                user_embeddings,
                item_embeddings,
                item_bias,
                ..
            } => user_embeddings.len() + item_embeddings.len() + item_bias.len(),
        })
    }
}

fn itemcf_neighbors(dataset: &Dataset, k: usize) -> Vec<Vec<(ItemId, f64)>> {
    // Users per item from the training positives.
    let mut users_of: Vec<BTreeSet<UserId>> = vec![BTreeSet::new(); dataset.num_items];
    for (user, positives) in dataset.train_positives.iter().enumerate() {
        for &item in positives {
            users_of[item].insert(user);
        }
    }
    let mut neighbors = Vec::with_capacity(dataset.num_items);
    for i in 0..dataset.num_items {
        let mut sims: Vec<(ItemId, f64)> = Vec::new();
        if !users_of[i].is_empty() {
            for (j, other) in users_of.iter().enumerate() {
                if j == i || other.is_empty() {
                    continue;
                }
                let inter = users_of[i].intersection(other).count();
                if inter == 0 {
                    continue;
                }
                let union = users_of[i].len() + other.len() - inter;
                sims.push((j, inter as f64 / union as f64));
            }
        }
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(k);
        neighbors.push(sims);
    }
    neighbors
}

fn fit_bpr(dataset: &Dataset, cfg: &BprConfig, seed: u64) -> Result<BaselineState> {
    if cfg.dim == 0 || cfg.epochs == 0 {
        return Err(Error::Config("BPR dim and epochs must be >= 1".into()));
    }
    let d = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_embeddings: Vec<f64> = (0..dataset.num_users * d)
        .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
        .collect();
    let mut item_embeddings: Vec<f64> = (0..dataset.num_items * d)
        .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
        .collect();
    let mut item_bias = vec![0.0f64; dataset.num_items];

    // Candidate negatives per user: anything outside the training positives.
    let allowed: Vec<Vec<ItemId>> = dataset
        .train_positives
        .iter()
        .map(|pos| (0..dataset.num_items).filter(|i| !pos.contains(i)).collect())
        .collect();

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        for &idx in &order {
            let (ctx, pos) = &dataset.train[idx];
            let user = ctx.user;
            let negs = &allowed[user];
            if negs.is_empty() {
                continue;
            }
            let neg = negs[rng.gen_range(0..negs.len())];

            let (i, j) = (*pos, neg);
            let u_off = user * d;
            let i_off = i * d;
            let j_off = j * d;
            let mut x = item_bias[i] - item_bias[j];
            for f in 0..d {
                x += user_embeddings[u_off + f]
                    * (item_embeddings[i_off + f] - item_embeddings[j_off + f]);
            }
            let g = crate::losses::sigmoid(x) - 1.0; // dLoss/dx for -log sigma(x)
            for f in 0..d {
                let uw = user_embeddings[u_off + f];
                let iw = item_embeddings[i_off + f];
                let jw = item_embeddings[j_off + f];
                user_embeddings[u_off + f] -= cfg.lr * (g * (iw - jw) + cfg.l2 * uw);
                item_embeddings[i_off + f] -= cfg.lr * (g * uw + cfg.l2 * iw);
                item_embeddings[j_off + f] -= cfg.lr * (-g * uw + cfg.l2 * jw);
            }
            item_bias[i] -= cfg.lr * (g + cfg.l2 * item_bias[i]);
            item_bias[j] -= cfg.lr * (-g + cfg.l2 * item_bias[j]);
        }
    }
    Ok(BaselineState::Bpr {
        dim: d,
        user_embeddings,
        item_embeddings,
        item_bias,
    })
}

/// Fisher-Yates with our own loop so shuffles depend only on the generator
/// stream, not on library internals.
pub(crate) fn shuffle<T>(slice: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..slice.len()).rev() {
        let j = rng.gen_range(0..=i);
        slice.swap(i, j);
    }
}
