//! Offline evaluation: metrics, synthetic corpora and replay harnesses.

pub mod corpus;
pub mod harness;
pub mod metrics;

pub use corpus::{
    drift_corpus, generate_corpus, geometry_corpus, Corpus, DriftSpec, GeometrySpec, SyntheticCorpusSpec,
};
pub use harness::{ablate_rewriting, replay_corpus, sweep_threshold, threshold_grid, Providers};
pub use metrics::{eval_escalation, eval_grouping, prf1, Counts, Evaluation, Prf1};
