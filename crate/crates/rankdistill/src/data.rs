//! Dataset ingestion, chronological splitting, sequence windowing, and
//! synthetic data generation.
//!
//! Interactions are implicit feedback: a (user, item, timestamp) triple means
//! the user acted on the item; absence of a triple carries no label. Each
//! user's timeline is split chronologically into train / validation / test
//! segments, and fixed-length windows over the train and validation segments
//! become (context, next-item) training pairs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type UserId = usize;
pub type ItemId = usize;

/// One implicit-feedback event. Duplicate (user, item, timestamp) triples are
/// legal and retained: interaction frequency is signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    /// Monotone ordering key within a user's timeline.
    pub timestamp: i64,
}

/// A user's item interactions in ascending timestamp order. Ties keep input
/// order, so re-ingesting the same file reproduces the same sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// The "query" of the ranking problem: a user plus their last `L` items,
/// most recent last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryContext {
    pub user: UserId,
    pub history: Vec<ItemId>,
}

/// A (context, next item) supervision pair.
pub type TrainPair = (QueryContext, ItemId);

/// Held-out evaluation query for one user: the most recent `L` actions from
/// the train+validation segments, the items to hide from the candidate pool,
/// and the test-segment items serving as relevance labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestQuery {
    pub user: UserId,
    pub context: QueryContext,
    /// Train + validation items of this user; removed from the ranked pool.
    pub exclude: BTreeSet<ItemId>,
    /// Test-segment items.
    pub relevant: BTreeSet<ItemId>,
}

/// Windowed, chronologically split view of an interaction log. Immutable
/// after construction and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    /// Window length L.
    pub window: usize,
    pub splits: (f64, f64, f64),
    pub train: Vec<TrainPair>,
    pub validation: Vec<TrainPair>,
    pub test: Vec<TestQuery>,
    /// Per user: the set of items observed in the training segment. This is
    /// the labeled set; everything else is the unlabeled pool for that user.
    pub train_positives: Vec<BTreeSet<ItemId>>,
}

/// Dense-index to original-id mapping produced by ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
}

/// Ingestion output: remapped interactions plus the id mapping to persist.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub interactions: Vec<Interaction>,
    pub idmap: IdMap,
}

/// Supported input file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    /// UTF-8 lines of `user \t item \t timestamp`, base-10 integers.
    TsvTriples,
}

/// Reads an interaction log, remapping user and item ids to dense 0-based
/// indices in order of first appearance. Rows come back in file order;
/// duplicates are retained.
pub fn load_interactions(path: &Path, format: InputFormat) -> Result<Ingested> {
    let InputFormat::TsvTriples = format;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut interactions = Vec::new();
    let mut idmap = IdMap::default();
    let mut user_index: std::collections::HashMap<u64, UserId> = std::collections::HashMap::new();
    let mut item_index: std::collections::HashMap<u64, ItemId> = std::collections::HashMap::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let parse = |field: Option<&str>, what: &str| -> Result<u64> {
            let s = field.ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("missing {what} field"),
            })?;
            s.trim().parse::<u64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad {what} {s:?}: {e}"),
            })
        };
        let user_raw = parse(fields.next(), "user")?;
        let item_raw = parse(fields.next(), "item")?;
        let ts_field = fields.next().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: "missing timestamp field".into(),
        })?;
        let timestamp = ts_field.trim().parse::<i64>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("bad timestamp {ts_field:?}: {e}"),
        })?;
        if fields.next().is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected exactly 3 tab-separated fields".into(),
            });
        }

        let user = *user_index.entry(user_raw).or_insert_with(|| {
            idmap.users.push(user_raw);
            idmap.users.len() - 1
        });
        let item = *item_index.entry(item_raw).or_insert_with(|| {
            idmap.items.push(item_raw);
            idmap.items.len() - 1
        });
        interactions.push(Interaction {
            user,
            item,
            timestamp,
        });
    }

    if interactions.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    Ok(Ingested {
        interactions,
        idmap,
    })
}

/// Groups interactions into per-user sequences ordered by ascending
/// timestamp, ties keeping input order (stable sort).
pub fn group_into_sequences(interactions: &[Interaction]) -> Vec<UserSequence> {
    let num_users = interactions.iter().map(|x| x.user + 1).max().unwrap_or(0);
    let mut per_user: Vec<Vec<(i64, ItemId)>> = vec![Vec::new(); num_users];
    for x in interactions {
        per_user[x.user].push((x.timestamp, x.item));
    }
    per_user
        .into_iter()
        .enumerate()
        .filter(|(_, seq)| !seq.is_empty())
        .map(|(user, mut seq)| {
            seq.sort_by_key(|&(ts, _)| ts);
            UserSequence {
                user,
                items: seq.into_iter().map(|(_, item)| item).collect(),
            }
        })
        .collect()
}

/// Ceiling of `fraction * n`, guarded against float noise just below or
/// above an exact integer.
fn ceil_split(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Splits each user's timeline chronologically (first `splits.0` of actions
/// to train, next `splits.1` to validation, rest to test; ceiling rounding)
/// and extracts length-`window` context windows.
///
/// Training windows lie entirely inside the training segment, so a user with
/// `n_train` training actions yields `max(0, n_train - window)` pairs.
/// Validation targets are validation-segment actions; their contexts may
/// reach back across the boundary (the history is the past, only targets are
/// split-pure). Each user's test query keeps the last `window` actions of
/// train+validation as context and the test-segment items as relevance.
pub fn build_dataset(
    interactions: &[Interaction],
    window: usize,
    splits: (f64, f64, f64),
) -> Result<Dataset> {
    if window == 0 {
        return Err(Error::Config("window length L must be >= 1".into()));
    }
    let (ft, fv, fe) = splits;
    if !(ft >= 0.0 && fv >= 0.0 && fe >= 0.0) || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative and sum to 1, got {splits:?}"
        )));
    }
    if interactions.is_empty() {
        return Err(Error::EmptyDataset("no interactions to split".into()));
    }

    let num_users = interactions.iter().map(|x| x.user + 1).max().unwrap_or(0);
    let num_items = interactions.iter().map(|x| x.item + 1).max().unwrap_or(0);

    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    let mut train_positives = vec![BTreeSet::new(); num_users];

    for seq in group_into_sequences(interactions) {
        let items = &seq.items;
        let n = items.len();
        let n_train = ceil_split(ft, n).min(n);
        let n_valid = ceil_split(fv, n).min(n - n_train);
        let n_seen = n_train + n_valid;

        train_positives[seq.user].extend(items[..n_train].iter().copied());

        for t in window..n_train {
            let context = QueryContext {
                user: seq.user,
                history: items[t - window..t].to_vec(),
            };
            train.push((context, items[t]));
        }
        for t in n_train.max(window)..n_seen {
            let context = QueryContext {
                user: seq.user,
                history: items[t - window..t].to_vec(),
            };
            validation.push((context, items[t]));
        }

        let relevant: BTreeSet<ItemId> = items[n_seen..].iter().copied().collect();
        if !relevant.is_empty() && n_seen >= window {
            test.push(TestQuery {
                user: seq.user,
                context: QueryContext {
                    user: seq.user,
                    history: items[n_seen - window..n_seen].to_vec(),
                },
                exclude: items[..n_seen].iter().copied().collect(),
                relevant,
            });
        }
    }

    Ok(Dataset {
        num_users,
        num_items,
        window,
        splits,
        train,
        validation,
        test,
        train_positives,
    })
}

/// Generates implicit-feedback sequences by walking a seeded random
/// first-order Markov chain over items. Each item's transition row is
/// `softmax(sharpness * logits)` with standard-normal logits; `sharpness = 0`
/// gives uniform transitions, large values make each row near-deterministic.
/// Identical arguments produce byte-identical output.
pub fn generate_synthetic(
    num_users: usize,
    num_items: usize,
    seq_len: usize,
    transition_sharpness: f64,
    seed: u64,
) -> Result<Vec<Interaction>> {
    if num_users == 0 || num_items == 0 || seq_len == 0 {
        return Err(Error::Config(
            "synthetic counts (users, items, sequence length) must be >= 1".into(),
        ));
    }
    if !transition_sharpness.is_finite() || transition_sharpness < 0.0 {
        return Err(Error::Config(format!(
            "transition sharpness must be finite and >= 0, got {transition_sharpness}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Cumulative transition rows for inverse-CDF sampling.
    let mut rows = Vec::with_capacity(num_items);
    for _ in 0..num_items {
        let logits: Vec<f64> = (0..num_items).map(|_| standard_normal(&mut rng)).collect();
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut cum = Vec::with_capacity(num_items);
        let mut total = 0.0;
        for &g in &logits {
            total += (transition_sharpness * (g - max)).exp();
            cum.push(total);
        }
        rows.push((cum, total));
    }

    let sample_row = |rng: &mut ChaCha8Rng, row: usize| -> ItemId {
        let (cum, total) = &rows[row];
        let u = rng.gen::<f64>() * total;
        match cum.binary_search_by(|probe| probe.partial_cmp(&u).unwrap()) {
            Ok(i) | Err(i) => i.min(num_items - 1),
        }
    };

    let mut out = Vec::with_capacity(num_users * seq_len);
    for user in 0..num_users {
        let mut current = rng.gen_range(0..num_items);
        out.push(Interaction {
            user,
            item: current,
            timestamp: 0,
        });
        for step in 1..seq_len {
            current = sample_row(&mut rng, current);
            out.push(Interaction {
                user,
                item: current,
                timestamp: step as i64,
            });
        }
    }
    Ok(out)
}

/// Standard normal via Box-Muller; two uniform draws per call keeps the
/// stream layout independent of any library sampling internals.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Ingest-time statistics for reporting.
#[derive(Debug, Clone, Serialize)]
pub struct DatasetStats {
    pub num_users: usize,
    pub num_items: usize,
    pub interactions: usize,
    pub distinct_user_item: usize,
    pub avg_actions_per_user: f64,
    pub train_pairs: usize,
    pub validation_pairs: usize,
    pub test_users: usize,
    /// `1 - distinct (user, item) pairs / (users * items)`.
    pub sparsity: f64,
}

pub fn dataset_stats(interactions: &[Interaction], dataset: &Dataset) -> DatasetStats {
    let nnz = interactions
        .iter()
        .map(|x| (x.user, x.item))
        .collect::<BTreeSet<_>>()
        .len();
    DatasetStats {
        num_users: dataset.num_users,
        num_items: dataset.num_items,
        interactions: interactions.len(),
        distinct_user_item: nnz,
        avg_actions_per_user: interactions.len() as f64 / dataset.num_users as f64,
        train_pairs: dataset.train.len(),
        validation_pairs: dataset.validation.len(),
        test_users: dataset.test.len(),
        sparsity: 1.0 - nnz as f64 / (dataset.num_users as f64 * dataset.num_items as f64),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    num_users: usize,
    num_items: usize,
    window: usize,
    splits: (f64, f64, f64),
    train_pairs: usize,
    validation_pairs: usize,
    test_users: usize,
}

fn write_items(buf: &mut String, items: impl IntoIterator<Item = ItemId>) {
    let mut first = true;
    for item in items {
        if !first {
            buf.push(',');
        }
        let _ = write!(buf, "{item}");
        first = false;
    }
}

fn pairs_to_tsv(pairs: &[TrainPair]) -> String {
    let mut buf = String::new();
    for (ctx, target) in pairs {
        let _ = write!(buf, "{}\t", ctx.user);
        write_items(&mut buf, ctx.history.iter().copied());
        let _ = writeln!(buf, "\t{target}");
    }
    buf
}

fn parse_items(field: &str, path: &Path, line: usize) -> Result<Vec<ItemId>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| {
            s.parse::<ItemId>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg: format!("bad item id {s:?}: {e}"),
            })
        })
        .collect()
}

fn tsv_to_pairs(text: &str, path: &Path) -> Result<Vec<TrainPair>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected `user \\t history \\t target`".into(),
            });
        }
        let user = fields[0].parse::<UserId>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad user id: {e}"),
        })?;
        let history = parse_items(fields[1], path, i + 1)?;
        let target = fields[2].parse::<ItemId>().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("bad target id: {e}"),
        })?;
        pairs.push((QueryContext { user, history }, target));
    }
    Ok(pairs)
}

impl Dataset {
    /// Serializes to a directory: `meta.json`, `train.tsv`, `valid.tsv`,
    /// `test.tsv`, `idmap.tsv`. Pass the ingestion id mapping when one
    /// exists; synthetic data uses the identity mapping.
    pub fn save(&self, dir: &Path, idmap: &IdMap) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, contents: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| Error::io(path.clone(), e))
        };

        let meta = DatasetMeta {
            num_users: self.num_users,
            num_items: self.num_items,
            window: self.window,
            splits: self.splits,
            train_pairs: self.train.len(),
            validation_pairs: self.validation.len(),
            test_users: self.test.len(),
        };
        let meta_json = serde_json::to_string_pretty(&meta)
            .map_err(|e| Error::Numeric(format!("meta serialization: {e}")))?;
        write("meta.json", meta_json + "\n")?;
        write("train.tsv", pairs_to_tsv(&self.train))?;
        write("valid.tsv", pairs_to_tsv(&self.validation))?;

        let mut test_buf = String::new();
        for q in &self.test {
            let _ = write!(test_buf, "{}\t", q.user);
            write_items(&mut test_buf, q.context.history.iter().copied());
            test_buf.push('\t');
            write_items(&mut test_buf, q.exclude.iter().copied());
            test_buf.push('\t');
            write_items(&mut test_buf, q.relevant.iter().copied());
            test_buf.push('\n');
        }
        write("test.tsv", test_buf)?;

        let mut idmap_buf = String::new();
        let users = if idmap.users.is_empty() {
            (0..self.num_users as u64).collect()
        } else {
            idmap.users.clone()
        };
        let items = if idmap.items.is_empty() {
            (0..self.num_items as u64).collect()
        } else {
            idmap.items.clone()
        };
        for (dense, original) in users.iter().enumerate() {
            let _ = writeln!(idmap_buf, "user\t{dense}\t{original}");
        }
        for (dense, original) in items.iter().enumerate() {
            let _ = writeln!(idmap_buf, "item\t{dense}\t{original}");
        }
        write("idmap.tsv", idmap_buf)
    }

    /// Loads a dataset directory written by [`Dataset::save`].
    ///
    /// `train_positives` is rebuilt from the training pairs (context union
    /// targets), which reconstructs the training-segment item set exactly for
    /// every user that has at least one training window.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| Error::io(path.clone(), e))
        };
        let meta: DatasetMeta = serde_json::from_str(&read("meta.json")?).map_err(|e| {
            Error::Parse {
                path: dir.join("meta.json"),
                line: 1,
                msg: e.to_string(),
            }
        })?;

        let train = tsv_to_pairs(&read("train.tsv")?, &dir.join("train.tsv"))?;
        let validation = tsv_to_pairs(&read("valid.tsv")?, &dir.join("valid.tsv"))?;

        let test_path = dir.join("test.tsv");
        let mut test = Vec::new();
        for (i, raw) in read("test.tsv")?.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    path: test_path.clone(),
                    line: i + 1,
                    msg: "expected `user \\t context \\t exclude \\t relevant`".into(),
                });
            }
            let user = fields[0].parse::<UserId>().map_err(|e| Error::Parse {
                path: test_path.clone(),
                line: i + 1,
                msg: format!("bad user id: {e}"),
            })?;
            let history = parse_items(fields[1], &test_path, i + 1)?;
            let exclude = parse_items(fields[2], &test_path, i + 1)?;
            let relevant = parse_items(fields[3], &test_path, i + 1)?;
            test.push(TestQuery {
                user,
                context: QueryContext { user, history },
                exclude: exclude.into_iter().collect(),
                relevant: relevant.into_iter().collect(),
            });
        }

        let mut train_positives = vec![BTreeSet::new(); meta.num_users];
        for (ctx, target) in &train {
            let set = &mut train_positives[ctx.user];
            set.extend(ctx.history.iter().copied());
            set.insert(*target);
        }

        Ok(Dataset {
            num_users: meta.num_users,
            num_items: meta.num_items,
            window: meta.window,
            splits: meta.splits,
            train,
            validation,
            test,
            train_positives,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_reads_rows_in_order() {
        let f = tmp_file("0\t5\t1\n0\t7\t2\n");
        let got = load_interactions(f.path(), InputFormat::TsvTriples).unwrap();
        assert_eq!(got.interactions.len(), 2);
        let seqs = group_into_sequences(&got.interactions);
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].user, 0);
        // Original ids 5 and 7 remap to dense 0 and 1.
        assert_eq!(seqs[0].items, vec![0, 1]);
        assert_eq!(got.idmap.items, vec![5, 7]);
    }

    #[test]
    fn load_rejects_malformed_line() {
        let f = tmp_file("a\tb\tc\n");
        match load_interactions(f.path(), InputFormat::TsvTriples) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_line_of_later_error() {
        let f = tmp_file("0\t1\t2\n3\t4\n");
        match load_interactions(f.path(), InputFormat::TsvTriples) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_empty_file() {
        let f = tmp_file("");
        assert!(matches!(
            load_interactions(f.path(), InputFormat::TsvTriples),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn duplicates_are_retained() {
        let f = tmp_file("0\t5\t1\n0\t5\t1\n1\t5\t1\n2\t6\t9\n");
        let got = load_interactions(f.path(), InputFormat::TsvTriples).unwrap();
        assert_eq!(got.interactions.len(), 4);
        assert_eq!(got.interactions[0], got.interactions[1]);
    }

    #[test]
    fn sequences_sorted_by_timestamp_stable() {
        let interactions = vec![
            Interaction { user: 0, item: 3, timestamp: 10 },
            Interaction { user: 0, item: 1, timestamp: 5 },
            Interaction { user: 0, item: 2, timestamp: 10 },
        ];
        let seqs = group_into_sequences(&interactions);
        // Equal timestamps keep input order: 3 before 2.
        assert_eq!(seqs[0].items, vec![1, 3, 2]);
    }

    fn one_user(items: &[ItemId]) -> Vec<Interaction> {
        items
            .iter()
            .enumerate()
            .map(|(t, &item)| Interaction { user: 0, item, timestamp: t as i64 })
            .collect()
    }

    #[test]
    fn build_splits_ten_actions_per_spec_example() {
        // Items 1..=10, L = 5: training actions are the first ceil(0.7*10)=7,
        // yielding contexts [1..5]->6 and [2..6]->7.
        let ix = one_user(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let ds = build_dataset(&ix, 5, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!(ds.train.len(), 2);
        assert_eq!(ds.train[0].0.history, vec![1, 2, 3, 4, 5]);
        assert_eq!(ds.train[0].1, 6);
        assert_eq!(ds.train[1].0.history, vec![2, 3, 4, 5, 6]);
        assert_eq!(ds.train[1].1, 7);
        // Validation: one action (item 8), context reaches back into train.
        assert_eq!(ds.validation.len(), 1);
        assert_eq!(ds.validation[0].0.history, vec![3, 4, 5, 6, 7]);
        assert_eq!(ds.validation[0].1, 8);
        // Test: items 9 and 10, context is the last 5 seen actions.
        assert_eq!(ds.test.len(), 1);
        assert_eq!(ds.test[0].context.history, vec![4, 5, 6, 7, 8]);
        assert_eq!(
            ds.test[0].relevant,
            [9, 10].into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(
            ds.train_positives[0],
            [1, 2, 3, 4, 5, 6, 7].into_iter().collect::<BTreeSet<_>>()
        );
    }

    #[test]
    fn short_history_yields_no_training_pairs() {
        let ix = one_user(&[1, 2, 3]);
        let ds = build_dataset(&ix, 5, (0.7, 0.1, 0.2)).unwrap();
        assert!(ds.train.is_empty());
    }

    #[test]
    fn zero_window_is_config_error() {
        let ix = one_user(&[1, 2, 3]);
        assert!(matches!(
            build_dataset(&ix, 0, (0.7, 0.1, 0.2)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_splits_rejected() {
        let ix = one_user(&[1, 2, 3]);
        assert!(matches!(
            build_dataset(&ix, 2, (0.7, 0.1, 0.1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_counts_match_window_formula() {
        // n_train training actions yield max(0, n_train - L) pairs.
        for n in 1..40usize {
            let items: Vec<ItemId> = (0..n).collect();
            let ix = one_user(&items);
            let ds = build_dataset(&ix, 5, (0.7, 0.1, 0.2)).unwrap();
            let n_train = ((0.7 * n as f64) - 1e-9).ceil() as usize;
            assert_eq!(ds.train.len(), n_train.saturating_sub(5), "n={n}");
        }
    }

    #[test]
    fn splits_are_chronologically_disjoint_position_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = rng.gen_range(1..60);
            let items: Vec<ItemId> = (0..n).map(|_| rng.gen_range(0..30)).collect();
            let ix = one_user(&items);
            let ds = build_dataset(&ix, 3, (0.7, 0.1, 0.2)).unwrap();
            let n_train = ceil_split(0.7, n).min(n);
            let n_valid = ceil_split(0.1, n).min(n - n_train);
            // Targets stay inside their segments.
            for (i, (_, _t)) in ds.train.iter().enumerate() {
                assert!(3 + i < n_train);
            }
            for (ctx, target) in &ds.validation {
                let pos = (0..n)
                    .filter(|&t| t >= n_train && t < n_train + n_valid)
                    .find(|&t| items[t] == *target && items[t - 3..t] == ctx.history[..]);
                assert!(pos.is_some());
            }
            if let Some(q) = ds.test.first() {
                for &r in &q.relevant {
                    assert!(items[n_train + n_valid..].contains(&r));
                }
            }
        }
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let ix = generate_synthetic(20, 10, 15, 2.0, 3).unwrap();
        let a = build_dataset(&ix, 3, (0.7, 0.1, 0.2)).unwrap();
        let b = build_dataset(&ix, 3, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(50, 20, 30, 5.0, 7).unwrap();
        let b = generate_synthetic(50, 20, 30, 5.0, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50 * 30);
    }

    #[test]
    fn synthetic_different_seeds_differ() {
        let a = generate_synthetic(10, 20, 30, 5.0, 7).unwrap();
        let b = generate_synthetic(10, 20, 30, 5.0, 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn synthetic_zero_sharpness_transitions_are_uniform() {
        // Chi-square goodness of fit per source item against the uniform
        // distribution over successors, alpha = 0.01.
        let num_items = 20;
        let need = 100_000;
        let seq_len = 200;
        let users = need / (seq_len - 1) + 1;
        let ix = generate_synthetic(users, num_items, seq_len, 0.0, 424).unwrap();

        let mut counts = vec![vec![0u64; num_items]; num_items];
        for w in ix.windows(2) {
            if w[0].user == w[1].user {
                counts[w[0].item][w[1].item] += 1;
            }
        }
        let critical = {
            use statrs::distribution::{ChiSquared, ContinuousCDF};
            ChiSquared::new((num_items - 1) as f64)
                .unwrap()
                .inverse_cdf(0.99)
        };
        for (src, row) in counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            assert!(total > 200, "source {src} undersampled");
            let expected = total as f64 / num_items as f64;
            let stat: f64 = row
                .iter()
                .map(|&c| {
                    let d = c as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(
                stat < critical,
                "source {src}: chi-square {stat:.2} >= {critical:.2}"
            );
        }
    }

    #[test]
    fn synthetic_high_sharpness_is_near_deterministic() {
        let num_items = 20;
        let seq_len = 200;
        let users = 100_000 / (seq_len - 1) + 1;
        let ix = generate_synthetic(users, num_items, seq_len, 50.0, 5).unwrap();

        let mut counts = vec![vec![0u64; num_items]; num_items];
        for w in ix.windows(2) {
            if w[0].user == w[1].user {
                counts[w[0].item][w[1].item] += 1;
            }
        }
        for (src, row) in counts.iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total < 50 {
                continue; // rarely-visited source, too noisy to judge
            }
            let max = *row.iter().max().unwrap();
            assert!(
                max as f64 > 0.9 * total as f64,
                "source {src}: top successor {max}/{total}"
            );
        }
    }

    #[test]
    fn save_load_round_trip() {
        let ix = generate_synthetic(15, 12, 20, 3.0, 5).unwrap();
        let ds = build_dataset(&ix, 4, (0.7, 0.1, 0.2)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), &IdMap::default()).unwrap();
        let loaded = Dataset::load(dir.path()).unwrap();
        assert_eq!(loaded.num_users, ds.num_users);
        assert_eq!(loaded.num_items, ds.num_items);
        assert_eq!(loaded.window, ds.window);
        assert_eq!(loaded.train, ds.train);
        assert_eq!(loaded.validation, ds.validation);
        assert_eq!(loaded.test, ds.test);
        // Positives reconstruct exactly for users that have training pairs.
        for (ctx, _) in &ds.train {
            assert_eq!(
                loaded.train_positives[ctx.user], ds.train_positives[ctx.user],
                "user {}",
                ctx.user
            );
        }
    }

    #[test]
    fn stats_sparsity_formula() {
        let ix = generate_synthetic(50, 20, 10, 1.0, 2).unwrap();
        let ds = build_dataset(&ix, 5, (0.7, 0.1, 0.2)).unwrap();
        let stats = dataset_stats(&ix, &ds);
        assert_eq!(stats.interactions, 500);
        let expect = 1.0 - stats.distinct_user_item as f64 / (50.0 * 20.0);
        assert!((stats.sparsity - expect).abs() < 1e-12);
    }
}
