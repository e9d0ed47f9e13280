//! Online ticket escalation: lifecycle tracking, LLM-driven classification,
//! embedding-based escalation deduplication with group-issue rewriting,
//! analyst feedback labels and fine-tuning dataset construction.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which the engine and tools use by default.

pub mod classifier;
pub mod dataset;
pub mod dedup;
pub mod embedding;
pub mod engine;
pub mod eval;
pub mod feedback;
pub mod jsonl;
pub mod mock;
pub mod prompts;
pub mod provider;
pub mod scalar;
pub mod store;
pub mod ticket;

pub use scalar::Scalar;

pub type IssueEmbedding = embedding::Embedding<f64>;
pub type Pool = dedup::EscalationPool<f64>;
pub type DefaultEngine = engine::Engine<f64>;
pub type DefaultState = engine::EngineState<f64>;
pub type DefaultDurableEngine = store::DurableEngine<f64>;
pub type DefaultSnapshot = store::Snapshot<f64>;
