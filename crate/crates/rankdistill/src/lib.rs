//! Ranking-model distillation toolkit.
//!
//! Trains a large teacher ranking model on implicit-feedback sequences, lets
//! it rank unlabeled items per query, and distills that top-K ranking into a
//! compact student model. The student is supervised by both the ground-truth
//! next item and the teacher's top-K list, weighted by position importance
//! and by the discrepancy between student and teacher ranks.
//!
//! Modules follow the pipeline:
//!
//! - [`data`]: interaction ingestion, chronological splitting, sequence
//!   windowing, and synthetic Markov-chain data generation.
//! - [`models`]: the sequential latent-factor scoring model (usable at
//!   teacher and student sizes) plus POP/ItemCF/BPR baselines.
//! - [`losses`]: point-wise, pair-wise, distillation, and combined losses,
//!   each returning value and per-item score gradients.
//! - [`weighting`]: position-importance weights, the sampled rank estimator,
//!   ranking-discrepancy weights, and the hybrid scheme with warm-up.
//! - [`trainer`]: teacher training, top-K cache generation, and the student
//!   distillation loop.
//! - [`eval`]: Prec@n / nDCG@n / MAP, model-size and latency reporting, and
//!   side-by-side comparisons.

pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod models;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
