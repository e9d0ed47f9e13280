//! Escalation deduplication.
//!
//! Pending tickets are summarized into an [`IssueSummary`], embedded, and
//! compared against every open escalated issue in the [`EscalationPool`].
//! The most similar record wins; if its cosine similarity is strictly above
//! the threshold the ticket is linked to it, otherwise the ticket founds a new
//! record. After each new link the record's issue is rewritten from the
//! owner's issue and all linked issues, and its embedding is recomputed.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedder, Embedding, EmbeddingError};
use crate::prompts::{self, json_object_span, render_transcript};
use crate::provider::{ChatMessage, ChatProvider};
use crate::scalar::Scalar;
use crate::ticket::{Ticket, TicketId, Timestamp};

pub const DEFAULT_THRESHOLD: f64 = 0.88;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssueSummary {
    pub text: String,
    pub product: Option<String>,
}

impl IssueSummary {
    pub fn new(text: impl Into<String>, product: Option<String>) -> Self {
        Self {
            text: text.into(),
            product,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DedupError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("ticket {0} already owns an escalation record")]
    AlreadyEscalated(TicketId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkedIssue {
    pub ticket_id: TicketId,
    pub issue: IssueSummary,
}

/// One unique escalated issue and the tickets linked to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EscalationRecord<S: Scalar> {
    pub ticket_id: TicketId,
    /// Founding ticket of the group; stable across representative promotion.
    pub group: TicketId,
    /// The representative ticket's own summarized issue.
    pub owner_issue: IssueSummary,
    /// Current, possibly rewritten, description of the group's issue.
    pub issue: IssueSummary,
    /// Embedding of `issue.text`.
    pub embedding: Embedding<S>,
    pub linked: Vec<LinkedIssue>,
    pub category: String,
    pub created_at: Timestamp,
    pub rewrites: u32,
}

impl<S: Scalar> EscalationRecord<S> {
    pub fn group_size(&self) -> usize {
        1 + self.linked.len()
    }

    pub fn members(&self) -> impl Iterator<Item = &TicketId> {
        std::iter::once(&self.ticket_id).chain(self.linked.iter().map(|l| &l.ticket_id))
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut ids: Vec<&TicketId> = self.linked.iter().map(|l| &l.ticket_id).collect();
        if ids.contains(&&self.ticket_id) {
            return Err(format!("record {} links its owner", self.ticket_id));
        }
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(format!("record {} has duplicate links", self.ticket_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    EscalateNew,
    LinkTo(TicketId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Resolution<S: Scalar> {
    pub decision: Decision,
    /// Best match in the pool at decision time, if the pool was non-empty.
    pub best: Option<(TicketId, S)>,
}

/// Effect of closing a ticket on the pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolDelta {
    /// The ticket was neither a representative nor a linked member.
    Untouched,
    /// A linked member left its group.
    LinkRemoved { owner: TicketId },
    /// A representative without open links closed; its record is gone.
    Retired { owner: TicketId },
    /// A representative closed; the oldest remaining link now owns the record.
    Promoted {
        old_owner: TicketId,
        new_owner: TicketId,
        relinked: Vec<TicketId>,
    },
}

/// Open escalated issues, keyed by representative ticket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EscalationPool<S: Scalar> {
    records: BTreeMap<TicketId, EscalationRecord<S>>,
    threshold: S,
}

impl<S: Scalar> EscalationPool<S> {
    pub fn new(threshold: f64) -> Result<Self, DedupError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DedupError::InvalidThreshold(threshold));
        }
        Ok(Self {
            records: BTreeMap::new(),
            threshold: S::from_f64_lossy(threshold),
        })
    }

    pub fn threshold(&self) -> S {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, owner: &TicketId) -> Option<&EscalationRecord<S>> {
        self.records.get(owner)
    }

    pub fn records(&self) -> impl Iterator<Item = &EscalationRecord<S>> {
        self.records.values()
    }

    /// Record owning or linking `ticket`.
    pub fn record_of(&self, ticket: &TicketId) -> Option<&EscalationRecord<S>> {
        self.records.get(ticket).or_else(|| {
            self.records
                .values()
                .find(|r| r.linked.iter().any(|l| &l.ticket_id == ticket))
        })
    }

    /// The record whose embedding is most similar to `query`. Ties go to the
    /// earliest `created_at`, then the lexicographically smallest ticket id.
    pub fn find_most_similar(&self, query: &Embedding<S>) -> Result<Option<(&EscalationRecord<S>, S)>, EmbeddingError> {
        let mut best: Option<(&EscalationRecord<S>, S)> = None;
        for record in self.records.values() {
            let sim = cosine_similarity(query, &record.embedding)?;
            let better = match &best {
                None => true,
                Some((b, bs)) => match sim.partial_cmp(bs).unwrap_or(Ordering::Equal) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => (record.created_at, &record.ticket_id) < (b.created_at, &b.ticket_id),
                },
            };
            if better {
                best = Some((record, sim));
            }
        }
        Ok(best)
    }

    /// Links the ticket to the best match when its similarity exceeds the
    /// threshold; otherwise inserts a new record owned by the ticket. The
    /// caller holds `&mut self`, so check-and-insert is one critical section.
    pub fn resolve_pending(
        &mut self,
        ticket_id: &TicketId,
        category: &str,
        issue: IssueSummary,
        embedding: Embedding<S>,
        now: Timestamp,
    ) -> Result<Resolution<S>, DedupError> {
        if self.records.contains_key(ticket_id) {
            return Err(DedupError::AlreadyEscalated(ticket_id.clone()));
        }
        let best = self
            .find_most_similar(&embedding)?
            .map(|(r, s)| (r.ticket_id.clone(), s));
        match &best {
            Some((owner, sim)) if *sim > self.threshold => {
                let record = self.records.get_mut(owner).expect("best match is in the pool");
                if !record.linked.iter().any(|l| &l.ticket_id == ticket_id) {
                    record.linked.push(LinkedIssue {
                        ticket_id: ticket_id.clone(),
                        issue,
                    });
                }
                Ok(Resolution {
                    decision: Decision::LinkTo(owner.clone()),
                    best,
                })
            }
            _ => {
                debug_assert!(self
                    .records
                    .values()
                    .all(|r| cosine_similarity(&embedding, &r.embedding).map_or(true, |s| s <= self.threshold)));
                self.records.insert(
                    ticket_id.clone(),
                    EscalationRecord {
                        ticket_id: ticket_id.clone(),
                        group: ticket_id.clone(),
                        owner_issue: issue.clone(),
                        issue,
                        embedding,
                        linked: Vec::new(),
                        category: category.to_owned(),
                        created_at: now,
                        rewrites: 0,
                    },
                );
                Ok(Resolution {
                    decision: Decision::EscalateNew,
                    best,
                })
            }
        }
    }

    /// Rewrites the record owned by `owner`; returns whether the issue changed.
    pub fn rewrite(&mut self, owner: &TicketId, provider: &dyn ChatProvider, embedder: &dyn Embedder<S>) -> bool {
        match self.records.get_mut(owner) {
            Some(record) => rewrite_issue(provider, embedder, record),
            None => false,
        }
    }

    /// Removes a closed ticket from dedup consideration.
    pub fn on_close(&mut self, ticket_id: &TicketId) -> PoolDelta {
        if let Some(mut record) = self.records.remove(ticket_id) {
            if record.linked.is_empty() {
                return PoolDelta::Retired {
                    owner: ticket_id.clone(),
                };
            }
            let heir = record.linked.remove(0);
            record.ticket_id = heir.ticket_id.clone();
            record.owner_issue = heir.issue;
            let relinked = record.linked.iter().map(|l| l.ticket_id.clone()).collect();
            self.records.insert(heir.ticket_id.clone(), record);
            return PoolDelta::Promoted {
                old_owner: ticket_id.clone(),
                new_owner: heir.ticket_id,
                relinked,
            };
        }
        for record in self.records.values_mut() {
            if let Some(pos) = record.linked.iter().position(|l| &l.ticket_id == ticket_id) {
                record.linked.remove(pos);
                return PoolDelta::LinkRemoved {
                    owner: record.ticket_id.clone(),
                };
            }
        }
        PoolDelta::Untouched
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for (key, record) in &self.records {
            if key != &record.ticket_id {
                return Err(format!("record keyed {key} owned by {}", record.ticket_id));
            }
            record.check_invariants()?;
            for m in record.members() {
                if !seen.insert(m.clone()) {
                    return Err(format!("ticket {m} belongs to two records"));
                }
            }
        }
        Ok(())
    }
}

pub const SUMMARY_INSTRUCTION: &str = "You are a meticulous expert of our cloud platform. Read the support ticket below, \
summarize the issue the customer reports in one concise description, and identify the affected cloud products \
as accurately as possible. Respond only with a JSON object {\"issue\": \"<issue description>\", \"product\": \"<product name or null>\"}.";

pub const REWRITE_INSTRUCTION: &str = "You are a meticulous expert of our cloud platform. Several customer tickets were \
found to describe the same issue. Given the issue of the escalated ticket and the issues of the tickets linked to it, \
rewrite the escalated issue description so that it highlights what these tickets have in common and no longer \
reflects details specific to a single ticket. Respond only with a JSON object {\"issue\": \"<rewritten issue description>\"}.";

pub fn build_summary_prompt(ticket: &Ticket, max_messages: usize) -> Vec<ChatMessage> {
    vec![
        ChatMessage::system(format!("{}\n{}", prompts::TASK_SUMMARIZE, SUMMARY_INSTRUCTION)),
        ChatMessage::user(format!(
            "<ticket>\ntitle: {}\n{}\n</ticket>",
            ticket.title,
            render_transcript(&ticket.transcript, max_messages)
        )),
    ]
}

pub fn build_rewrite_prompt<S: Scalar>(record: &EscalationRecord<S>) -> Vec<ChatMessage> {
    let mut user = format!("<issue role=\"escalated\">{}</issue>\n", record.owner_issue.text);
    for l in &record.linked {
        user.push_str(&format!("<issue role=\"linked\">{}</issue>\n", l.issue.text));
    }
    vec![
        ChatMessage::system(format!("{}\n{}", prompts::TASK_REWRITE, REWRITE_INSTRUCTION)),
        ChatMessage::user(user.trim_end().to_owned()),
    ]
}

fn parse_issue(raw: &str) -> Option<IssueSummary> {
    let value: serde_json::Value = serde_json::from_str(json_object_span(raw)?).ok()?;
    let text = value.get("issue")?.as_str()?.trim();
    if text.is_empty() {
        return None;
    }
    let product = value
        .get("product")
        .and_then(serde_json::Value::as_str)
        .map(str::trim)
        .filter(|p| !p.is_empty() && !p.eq_ignore_ascii_case("null"))
        .map(str::to_owned);
    Some(IssueSummary::new(text, product))
}

fn fallback_issue(ticket: &Ticket) -> IssueSummary {
    let text = if ticket.title.trim().is_empty() {
        ticket
            .transcript
            .iter()
            .find(|m| !m.text.trim().is_empty())
            .map(|m| m.text.trim().to_owned())
            .unwrap_or_else(|| format!("ticket {}", ticket.id))
    } else {
        ticket.title.trim().to_owned()
    };
    IssueSummary::new(text, None)
}

/// Summarizes a pending ticket's issue; unusable output falls back to the title.
pub fn summarize_issue(provider: &dyn ChatProvider, ticket: &Ticket, max_messages: usize) -> IssueSummary {
    let prompt = build_summary_prompt(ticket, max_messages);
    match provider.complete(&prompt, 0.0) {
        Ok(raw) => parse_issue(&raw).unwrap_or_else(|| {
            tracing::warn!(ticket = %ticket.id, "unusable issue summary, using title");
            fallback_issue(ticket)
        }),
        Err(e) => {
            tracing::warn!(ticket = %ticket.id, error = %e, "issue summary failed, using title");
            fallback_issue(ticket)
        }
    }
}

/// Rewrites `record.issue` from the owner's issue and the linked issues, then
/// re-embeds it. Best-effort: on any failure the record is left unchanged.
pub fn rewrite_issue<S: Scalar>(
    provider: &dyn ChatProvider,
    embedder: &dyn Embedder<S>,
    record: &mut EscalationRecord<S>,
) -> bool {
    if record.linked.is_empty() {
        return false;
    }
    let prompt = build_rewrite_prompt(record);
    let rewritten = match provider.complete(&prompt, 0.0) {
        Ok(raw) => parse_issue(&raw),
        Err(e) => {
            tracing::warn!(record = %record.ticket_id, error = %e, "issue rewrite failed");
            None
        }
    };
    let Some(mut issue) = rewritten else {
        return false;
    };
    if issue.product.is_none() {
        issue.product = record.issue.product.clone();
    }
    match embedder.embed(&issue.text) {
        Ok(embedding) if embedding.dim() == record.embedding.dim() => {
            record.issue = issue;
            record.embedding = embedding;
            record.rewrites += 1;
            true
        }
        Ok(_) | Err(_) => {
            tracing::warn!(record = %record.ticket_id, "rewritten issue could not be embedded");
            false
        }
    }
}
