//! Implementations behind the CLI verbs, kept out of `main` so they can be tested.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use escalation_core::dataset::{self, DatasetError, DatasetMode, StrategyConfig};
use escalation_core::dedup::DedupError;
use escalation_core::engine::{Counters, EventPayload};
use escalation_core::eval::corpus::CorpusError;
use escalation_core::eval::harness::{ablation_csv, escalation_quality, sweep_csv};
use escalation_core::eval::{
    ablate_rewriting, drift_corpus, generate_corpus, geometry_corpus, replay_corpus, sweep_threshold, threshold_grid,
    Corpus, DriftSpec, Evaluation, GeometrySpec, Providers, SyntheticCorpusSpec,
};
use escalation_core::feedback::{derive_labels, FeedbackError, FeedbackLedger};
use escalation_core::jsonl;
use escalation_core::store::{replay, DurableEngine, StoreError};
use escalation_core::DefaultDurableEngine;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;

use crate::alerts::WebhookDispatcher;
use crate::api::{router, AppState};
use crate::config::EngineConfig;
use crate::providers::{build_engine, chat_provider, embedder};

pub const FEEDBACK_FILE: &str = "feedback.jsonl";

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {skipped} unreadable line(s) from line {line}")]
    CorruptLog { path: PathBuf, line: usize, skipped: usize },
    #[error(transparent)]
    Dedup(#[from] DedupError),
    #[error("corpus has {labeled} labeled tickets out of {total}; evaluation needs ground truth on every ticket")]
    Unlabeled { labeled: usize, total: usize },
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Built-in synthetic corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SyntheticKind {
    /// Paraphrased tickets in random groups with "Others" noise.
    General,
    /// Controlled intra/inter-group similarity around the default threshold.
    Geometry,
    /// Groups whose wording drifts member by member.
    Drift,
}

pub fn synthetic_corpus(kind: SyntheticKind, seed: Option<u64>, dim: usize) -> Result<Corpus, CommandError> {
    Ok(match kind {
        SyntheticKind::General => {
            let mut spec = SyntheticCorpusSpec::default();
            spec.seed = seed.unwrap_or(spec.seed);
            generate_corpus(&spec)?
        }
        SyntheticKind::Geometry => {
            let mut spec = GeometrySpec {
                dim,
                ..GeometrySpec::default()
            };
            spec.seed = seed.unwrap_or(spec.seed);
            geometry_corpus(&spec)
        }
        SyntheticKind::Drift => {
            let mut spec = DriftSpec {
                dim,
                ..DriftSpec::default()
            };
            spec.seed = seed.unwrap_or(spec.seed);
            drift_corpus(&spec)
        }
    })
}

/// Reads an event log; corpus files must parse completely.
pub fn read_corpus(path: &Path) -> Result<Corpus, CommandError> {
    let prefix = jsonl::read_prefix(path)?;
    if prefix.skipped_lines > 0 {
        return Err(CommandError::CorruptLog {
            path: path.to_path_buf(),
            line: prefix.records.len() + 1,
            skipped: prefix.skipped_lines,
        });
    }
    Ok(Corpus { events: prefix.records })
}

pub fn write_corpus(corpus: &Corpus, out: &Path) -> Result<(), CommandError> {
    fs::write(out, corpus.to_jsonl())?;
    Ok(())
}

fn providers(cfg: &EngineConfig) -> Providers<f64> {
    Providers {
        chat: chat_provider(cfg),
        embedder: embedder(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplaySummary {
    pub applied: usize,
    pub rejected: usize,
    pub counters: Counters,
    pub open_escalations: usize,
}

/// Folds a log into a fresh engine; with `out`, writes the final state JSON there.
pub fn run_replay(cfg: &EngineConfig, log: &Path, out: Option<&Path>) -> Result<ReplaySummary, CommandError> {
    let corpus = read_corpus(log)?;
    let mut engine = build_engine(cfg);
    let (applied, rejected) = replay(&mut engine, &corpus.events);
    if let Some(out) = out {
        fs::write(out, engine.state().to_json())?;
    }
    Ok(ReplaySummary {
        applied,
        rejected,
        counters: engine.state().counters.clone(),
        open_escalations: engine.state().pool.len(),
    })
}

/// Threshold sweep over `corpus` as CSV (`theta,precision,recall,f1,tp,fp,fn`).
pub fn run_sweep(cfg: &EngineConfig, corpus: &Corpus, lo: f64, hi: f64, step: f64) -> Result<String, CommandError> {
    let grid = threshold_grid(lo, hi, step);
    if grid.is_empty() {
        return Err(CommandError::EmptyGrid);
    }
    let rows = sweep_threshold::<f64>(corpus, &grid, &cfg.pipeline_settings(), &providers(cfg))?;
    Ok(sweep_csv(&rows))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub threshold: f64,
    pub escalation: Evaluation<f64>,
    pub grouping: Evaluation<f64>,
    pub alerts: usize,
    pub rejected: usize,
}

/// Escalation and grouping quality of one replay at the configured threshold.
pub fn run_eval(cfg: &EngineConfig, corpus: &Corpus) -> Result<EvalReport, CommandError> {
    let total = corpus
        .events
        .iter()
        .filter(|e| matches!(e.payload, EventPayload::TicketCreated { .. }))
        .count();
    let labeled = corpus.truths().len();
    if labeled != total || total == 0 {
        return Err(CommandError::Unlabeled { labeled, total });
    }
    let outcome = replay_corpus::<f64>(corpus, cfg.pipeline_settings(), &providers(cfg))?;
    Ok(EvalReport {
        threshold: cfg.threshold,
        escalation: escalation_quality(corpus, &outcome.state),
        grouping: outcome.grouping(&corpus.grouping_labels()),
        alerts: outcome.alerts,
        rejected: outcome.rejected,
    })
}

/// Grouping quality with and without issue rewriting, as CSV.
pub fn run_ablation(cfg: &EngineConfig, corpus: &Corpus) -> Result<String, CommandError> {
    let report = ablate_rewriting::<f64>(corpus, &cfg.pipeline_settings(), &providers(cfg))?;
    Ok(ablation_csv(&report))
}

/// Opens the service's durable engine and feedback ledger under `data_dir`.
pub fn open_data_dir(cfg: &EngineConfig) -> Result<(DefaultDurableEngine, FeedbackLedger), CommandError> {
    let (engine, report) = DurableEngine::open(&cfg.data_dir, build_engine(cfg), cfg.snapshot_every)?;
    tracing::info!(?report, dir = %cfg.data_dir.display(), "engine restored");
    let (ledger, skipped) = FeedbackLedger::open(cfg.data_dir.join(FEEDBACK_FILE))?;
    if skipped > 0 {
        tracing::warn!(skipped, "dropped corrupt feedback ledger tail");
    }
    Ok((engine, ledger))
}

/// Builds a fine-tuning dataset from the data directory's tickets and feedback.
pub fn run_build_dataset(
    cfg: &EngineConfig,
    mode: DatasetMode,
    revisions: usize,
    out: &Path,
) -> Result<usize, CommandError> {
    let (engine, ledger) = open_data_dir(cfg)?;
    let state = engine.engine().state();
    let labels = derive_labels(ledger.events(), &state.predictions());
    let strategy = StrategyConfig::new(mode, revisions)?;
    let chat = chat_provider(cfg);
    let spec = cfg.prompt_spec();
    let samples = dataset::build(&labels, &state.tickets, chat.as_ref(), &spec, &strategy)?;
    dataset::emit(&samples, &spec, out)?;
    Ok(samples.len())
}

/// Serves the API until `shutdown` resolves, then writes a final snapshot.
pub async fn serve(
    cfg: EngineConfig,
    listener: TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), CommandError> {
    let (engine, ledger) = {
        let cfg = cfg.clone();
        // blocking HTTP clients must not be created on a runtime thread
        tokio::task::spawn_blocking(move || open_data_dir(&cfg))
            .await
            .map_err(|e| io::Error::other(e.to_string()))??
    };
    let state = AppState::new(engine, ledger, WebhookDispatcher::from_config(&cfg));
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(Arc::clone(&state)))
        .with_graceful_shutdown(shutdown)
        .await?;
    let snapshot = tokio::task::spawn_blocking(move || state.lock().engine.snapshot())
        .await
        .map_err(|e| io::Error::other(e.to_string()))?;
    snapshot?;
    Ok(())
}
