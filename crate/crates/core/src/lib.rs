//! Diverse fingerprint ensembles for multiple-choice benchmarks.
//!
//! Given per-model prediction logs on a multi-subject benchmark, builds one
//! weighted ensemble per subject:
//!
//! 1. score every model on the subject's validation questions,
//! 2. drop models below a q-quantile accuracy threshold,
//! 3. cluster the survivors' response fingerprints with DBSCAN (cosine
//!    distance) and keep the most accurate model of each cluster,
//! 4. weight the kept models by `exp(gamma * accuracy)`, normalized,
//!
//! and answers test questions by weighted plurality vote. Baselines (best
//! single model on test, best on validation, equal-weight majority voting)
//! are evaluated alongside.

// `!(x > 0.0)` style checks are used on purpose so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster;
pub mod collect;
pub mod config;
pub mod error;
pub mod fingerprint;
pub mod ingest;
pub mod jsonl;
pub mod pipeline;
pub mod select;
pub mod simulate;
pub mod sweep;
pub mod vote;

pub use config::{FilterOrder, FingerprintStrategy, RunConfig};
pub use error::{Error, Result};
