//! Corpus replays: threshold sweeps and the rewriting ablation. Each replay
//! owns a fresh engine, so sweeps run in parallel across thresholds.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use super::metrics::{eval_escalation, eval_grouping, predicted_escalations, Evaluation, GroupingLabelSet};
use crate::dedup::DedupError;
use crate::embedding::Embedder;
use crate::engine::{Engine, EngineState, Notice, PipelineSettings};
use crate::provider::ChatProvider;
use crate::ticket::TicketId;
use crate::Scalar;

/// Providers shared (read-only) by every replay.
#[derive(Clone)]
pub struct Providers<S: Scalar> {
    pub chat: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder<S>>,
}

pub struct ReplayOutcome<S: Scalar> {
    pub state: EngineState<S>,
    /// Best similarity seen by every pending resolution, in order.
    pub realized: Vec<f64>,
    pub alerts: usize,
    pub rejected: usize,
}

impl<S: Scalar> ReplayOutcome<S> {
    pub fn grouping(&self, labels: &GroupingLabelSet) -> Evaluation<S> {
        let predicted: BTreeMap<TicketId, Option<TicketId>> = self
            .state
            .predicted_groups()
            .into_iter()
            .filter(|(id, _)| labels.contains_key(id))
            .collect();
        eval_grouping(&predicted, labels).expect("filtered to labeled tickets")
    }
}

pub fn replay_corpus<S: Scalar>(
    corpus: &Corpus,
    settings: PipelineSettings,
    providers: &Providers<S>,
) -> Result<ReplayOutcome<S>, DedupError> {
    let mut engine = Engine::new(settings, providers.chat.clone(), providers.embedder.clone())?;
    let mut out = ReplayOutcome {
        state: EngineState::new(engine.settings().threshold)?,
        realized: Vec::new(),
        alerts: 0,
        rejected: 0,
    };
    for ev in &corpus.events {
        match engine.ingest(ev) {
            Ok(notices) => {
                for n in notices {
                    match n {
                        Notice::Alert(_) => out.alerts += 1,
                        Notice::Resolved {
                            best_similarity: Some(s),
                            ..
                        } => out.realized.push(s),
                        _ => {}
                    }
                }
            }
            Err(e) => {
                tracing::warn!(error = %e, "corpus event rejected");
                out.rejected += 1;
            }
        }
    }
    out.state = engine.state().clone();
    Ok(out)
}

/// `lo, lo + step, ..., hi`, rounded so decimal grids land on exact decimals.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if step <= 0.0 || hi < lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect()
}

pub const DEFAULT_SWEEP: (f64, f64, f64) = (0.86, 0.95, 0.01);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SweepRow<S: Scalar> {
    pub theta: f64,
    pub grouping: Evaluation<S>,
    #[serde(skip)]
    pub realized: Vec<f64>,
}

pub fn sweep_threshold<S: Scalar>(
    corpus: &Corpus,
    thetas: &[f64],
    base: &PipelineSettings,
    providers: &Providers<S>,
) -> Result<Vec<SweepRow<S>>, DedupError> {
    let labels = corpus.grouping_labels();
    thetas
        .par_iter()
        .map(|&theta| {
            let settings = PipelineSettings {
                threshold: theta,
                ..base.clone()
            };
            let out = replay_corpus(corpus, settings, providers)?;
            Ok(SweepRow {
                theta,
                grouping: out.grouping(&labels),
                realized: out.realized,
            })
        })
        .collect()
}

pub fn sweep_csv<S: Scalar>(rows: &[SweepRow<S>]) -> String {
    let mut out = String::from("theta,precision,recall,f1,tp,fp,fn\n");
    for r in rows {
        let (s, c) = (&r.grouping.scores, &r.grouping.counts);
        out.push_str(&format!(
            "{:.2},{:.6},{:.6},{:.6},{},{},{}\n",
            r.theta, s.precision, s.recall, s.f1, c.tp, c.fp, c.fn_
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AblationSlice<S: Scalar> {
    pub without_rewriting: Evaluation<S>,
    pub with_rewriting: Evaluation<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct AblationReport<S: Scalar> {
    /// Every labeled ticket.
    pub all: AblationSlice<S>,
    /// Tickets whose true group has at least three members, i.e. an
    /// escalation with more than one linked ticket.
    pub multi_link: AblationSlice<S>,
    /// Whether both runs grouped every ticket identically.
    pub identical_grouping: bool,
}

pub fn ablate_rewriting<S: Scalar>(
    corpus: &Corpus,
    base: &PipelineSettings,
    providers: &Providers<S>,
) -> Result<AblationReport<S>, DedupError> {
    let labels = corpus.grouping_labels();
    let mut sizes: BTreeMap<&String, usize> = BTreeMap::new();
    for g in labels.values().flatten() {
        *sizes.entry(g).or_default() += 1;
    }
    let multi: GroupingLabelSet = labels
        .iter()
        .filter(|(_, g)| g.as_ref().is_some_and(|g| sizes[g] >= 3))
        .map(|(id, g)| (id.clone(), g.clone()))
        .collect();

    let run = |rewrite| {
        replay_corpus(
            corpus,
            PipelineSettings {
                rewrite,
                ..base.clone()
            },
            providers,
        )
    };
    let (off, on) = rayon::join(|| run(false), || run(true));
    let (off, on) = (off?, on?);
    Ok(AblationReport {
        all: AblationSlice {
            without_rewriting: off.grouping(&labels),
            with_rewriting: on.grouping(&labels),
        },
        multi_link: AblationSlice {
            without_rewriting: off.grouping(&multi),
            with_rewriting: on.grouping(&multi),
        },
        identical_grouping: off.state.predicted_groups() == on.state.predicted_groups(),
    })
}

pub fn ablation_csv<S: Scalar>(r: &AblationReport<S>) -> String {
    let mut out = String::from("slice,rewriting,precision,recall,f1\n");
    for (name, slice) in [("all", &r.all), ("multi_link", &r.multi_link)] {
        for (flag, e) in [("off", &slice.without_rewriting), ("on", &slice.with_rewriting)] {
            out.push_str(&format!(
                "{name},{flag},{:.6},{:.6},{:.6}\n",
                e.scores.precision, e.scores.recall, e.scores.f1
            ));
        }
    }
    out
}

/// Escalation metrics of a finished replay against the corpus labels.
pub fn escalation_quality<S: Scalar>(corpus: &Corpus, state: &EngineState<S>) -> Evaluation<S> {
    let predicted = predicted_escalations(&state.predictions(), corpus.ticket_ids());
    eval_escalation(&predicted, &corpus.escalation_labels()).expect("labels cover the corpus")
}
