//! Analyst feedback on escalation alerts and the labels derived from it.
//!
//! Explicit votes are direct labels and always outrank the indirect signal of
//! an analyst joining the ticket through the alert's link.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl;
use crate::ticket::{Prediction, TicketId, Timestamp, OTHERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Upvote,
    Downvote,
    JoinedViaLink,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub ticket_id: TicketId,
    pub kind: FeedbackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_category: Option<String>,
    pub timestamp: Timestamp,
}

impl FeedbackEvent {
    pub fn upvote(ticket_id: TicketId, timestamp: Timestamp) -> Self {
        Self {
            ticket_id,
            kind: FeedbackKind::Upvote,
            corrected_category: None,
            timestamp,
        }
    }

    pub fn downvote(ticket_id: TicketId, corrected: Option<&str>, timestamp: Timestamp) -> Self {
        Self {
            ticket_id,
            kind: FeedbackKind::Downvote,
            corrected_category: corrected.map(str::to_owned),
            timestamp,
        }
    }

    pub fn joined(ticket_id: TicketId, timestamp: Timestamp) -> Self {
        Self {
            ticket_id,
            kind: FeedbackKind::JoinedViaLink,
            corrected_category: None,
            timestamp,
        }
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("ticket {0} was never escalated or linked")]
    UnknownTicket(TicketId),
    #[error("corrected_category is only allowed on downvotes")]
    CorrectionWithoutDownvote,
    #[error("unknown corrected category {0:?}")]
    UnknownCategory(String),
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
}

/// What the ledger needs to know about the engine to validate feedback.
pub trait FeedbackTargets {
    /// Whether the ticket has ever been escalated or linked.
    fn accepts_feedback(&self, ticket: &TicketId) -> bool;
    /// Configured spelling of a category name, or `None` if unknown.
    fn canonical_category(&self, name: &str) -> Option<String>;
}

/// Append-only feedback log, optionally mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct FeedbackLedger {
    events: Vec<FeedbackEvent>,
    sink: Option<(PathBuf, File)>,
}

impl FeedbackLedger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) a ledger file and loads its events. Loading
    /// stops at the first unparsable line; that line and everything after it
    /// are discarded and their count returned.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, usize), FeedbackError> {
        let path = path.as_ref().to_path_buf();
        let prefix = jsonl::read_prefix(&path)?;
        let file = jsonl::open_append_at(&path, prefix.valid_bytes)?;
        Ok((
            Self {
                events: prefix.records,
                sink: Some((path, file)),
            },
            prefix.skipped_lines,
        ))
    }

    pub fn path(&self) -> Option<&Path> {
        self.sink.as_ref().map(|(p, _)| p.as_path())
    }

    /// Validates and appends `event`, returning its position in the ledger.
    pub fn record(&mut self, mut event: FeedbackEvent, targets: &dyn FeedbackTargets) -> Result<usize, FeedbackError> {
        if !targets.accepts_feedback(&event.ticket_id) {
            return Err(FeedbackError::UnknownTicket(event.ticket_id));
        }
        if let Some(c) = &event.corrected_category {
            if event.kind != FeedbackKind::Downvote {
                return Err(FeedbackError::CorrectionWithoutDownvote);
            }
            event.corrected_category = Some(
                targets
                    .canonical_category(c)
                    .ok_or_else(|| FeedbackError::UnknownCategory(c.clone()))?,
            );
        }
        if let Some((_, file)) = &mut self.sink {
            jsonl::append(file, &event)?;
        }
        self.events.push(event);
        Ok(self.events.len() - 1)
    }

    pub fn events(&self) -> &[FeedbackEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelSource {
    ExplicitVote,
    JoinSignal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedLabel {
    pub ticket_id: TicketId,
    pub label_category: String,
    pub source: LabelSource,
    pub predicted_category: String,
    pub predicted_thought: String,
}

impl DerivedLabel {
    pub fn prediction_correct(&self) -> bool {
        self.label_category == self.predicted_category
    }
}

/// One label per ticket with feedback, in ticket-id order. The latest
/// explicit vote wins; a join signal counts only when no vote exists.
/// Tickets without a stored prediction are skipped.
pub fn derive_labels(events: &[FeedbackEvent], predictions: &BTreeMap<TicketId, Prediction>) -> Vec<DerivedLabel> {
    let mut latest_vote: BTreeMap<&TicketId, &FeedbackEvent> = BTreeMap::new();
    let mut joined: BTreeMap<&TicketId, bool> = BTreeMap::new();
    for ev in events {
        match ev.kind {
            FeedbackKind::Upvote | FeedbackKind::Downvote => {
                latest_vote.insert(&ev.ticket_id, ev);
            }
            FeedbackKind::JoinedViaLink => {
                joined.insert(&ev.ticket_id, true);
            }
        }
    }
    let mut tickets: Vec<&TicketId> = latest_vote.keys().chain(joined.keys()).copied().collect();
    tickets.sort();
    tickets.dedup();

    tickets
        .into_iter()
        .filter_map(|id| {
            let Some(pred) = predictions.get(id) else {
                tracing::warn!(ticket = %id, "feedback for ticket without prediction");
                return None;
            };
            let (label, source) = match latest_vote.get(id) {
                Some(vote) if vote.kind == FeedbackKind::Upvote => (pred.category.clone(), LabelSource::ExplicitVote),
                Some(vote) => (
                    vote.corrected_category.clone().unwrap_or_else(|| OTHERS.to_owned()),
                    LabelSource::ExplicitVote,
                ),
                None => (pred.category.clone(), LabelSource::JoinSignal),
            };
            Some(DerivedLabel {
                ticket_id: id.clone(),
                label_category: label,
                source,
                predicted_category: pred.category.clone(),
                predicted_thought: pred.thought.clone(),
            })
        })
        .collect()
}
