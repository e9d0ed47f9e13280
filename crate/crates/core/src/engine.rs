//! The online escalation loop: ingestion events folded into ticket, pool and
//! counter state, with one analysis round per new message on an active ticket.
//!
//! An analysis round classifies the ticket; "Others" returns it to `Active`,
//! any other category moves it to `Pending`, where its issue is summarized,
//! embedded and resolved against the escalation pool. A new escalation emits
//! exactly one [`AlertNotification`]; a link triggers a group-issue rewrite.
//! With deterministic providers the state is a pure fold of the event log.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify_with_examples, retrieve_icl_examples, ExampleStore, IclExample, PromptSpec};
use crate::dedup::{summarize_issue, Decision, DedupError, EscalationPool, IssueSummary, PoolDelta, DEFAULT_THRESHOLD};
use crate::embedding::{Embedder, Embedding, HashedBagOfWords};
use crate::feedback::FeedbackTargets;
use crate::provider::ChatProvider;
use crate::scalar::Scalar;
use crate::ticket::{
    LifecycleError, LifecycleEvent, Message, Prediction, StateEntry, Ticket, TicketId, TicketState, Timestamp,
};

/// Ground truth attached to synthetic corpora; ignored by live ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketTruth {
    pub escalate: bool,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    TicketCreated {
        title: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<TicketTruth>,
    },
    MessageAppended {
        message: Message,
    },
    TicketClosed,
}

/// One line of the durable event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestEvent {
    pub ticket_id: TicketId,
    pub timestamp: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

impl IngestEvent {
    pub fn created(ticket_id: TicketId, title: impl Into<String>, timestamp: Timestamp) -> Self {
        Self {
            ticket_id,
            timestamp,
            payload: EventPayload::TicketCreated {
                title: title.into(),
                truth: None,
            },
        }
    }

    pub fn message(ticket_id: TicketId, message: Message) -> Self {
        Self {
            ticket_id,
            timestamp: message.timestamp,
            payload: EventPayload::MessageAppended { message },
        }
    }

    pub fn closed(ticket_id: TicketId, timestamp: Timestamp) -> Self {
        Self {
            ticket_id,
            timestamp,
            payload: EventPayload::TicketClosed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertNotification {
    pub ticket_id: TicketId,
    pub category: String,
    pub issue_summary: IssueSummary,
    pub group_size: usize,
    pub link_url: String,
}

/// Side effects of applying one event, in the order they happened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Notice {
    StateChanged {
        ticket_id: TicketId,
        from: Option<TicketState>,
        to: TicketState,
    },
    Alert(AlertNotification),
    Resolved {
        ticket_id: TicketId,
        decision: Decision,
        best_similarity: Option<f64>,
    },
    Rewritten {
        owner: TicketId,
        issue: IssueSummary,
    },
    Promoted {
        old_owner: TicketId,
        new_owner: TicketId,
    },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unknown ticket {0}")]
    UnknownTicket(TicketId),
    #[error("ticket {0} was already created")]
    OutOfOrder(TicketId),
    #[error("ticket {0} is closed")]
    TicketClosed(TicketId),
    #[error("invalid event for {ticket}: {reason}")]
    InvalidEvent { ticket: TicketId, reason: String },
    #[error("pipeline bug: {0}")]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Dedup(#[from] DedupError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    pub prompt: PromptSpec,
    pub threshold: f64,
    /// Rewrite a group's issue after every new link.
    pub rewrite: bool,
    /// In-context examples retrieved per classification.
    pub icl_k: usize,
    /// Alert links point at `{link_base_url}/tickets/{id}`.
    pub link_base_url: String,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            prompt: PromptSpec::default(),
            threshold: DEFAULT_THRESHOLD,
            rewrite: true,
            icl_k: 0,
            link_base_url: "http://localhost:8080".to_owned(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub processed: u64,
    pub rounds: u64,
    pub escalated: u64,
    pub linked: u64,
    pub closed: u64,
    pub rewrites: u64,
    pub promotions: u64,
}

/// Everything derived from the event log; this is what snapshots store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct EngineState<S: Scalar> {
    pub tickets: BTreeMap<TicketId, Ticket>,
    pub pool: EscalationPool<S>,
    /// Embedding of each ticket's own issue summary.
    pub issue_embeddings: BTreeMap<TicketId, Embedding<S>>,
    pub counters: Counters,
}

impl<S: Scalar> EngineState<S> {
    pub fn new(threshold: f64) -> Result<Self, DedupError> {
        Ok(Self {
            tickets: BTreeMap::new(),
            pool: EscalationPool::new(threshold)?,
            issue_embeddings: BTreeMap::new(),
            counters: Counters::default(),
        })
    }

    /// Bit-stable JSON encoding; equal states encode to equal bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("engine state serializes")
    }

    /// Predicted group per ticket: the founding ticket of its escalation group.
    pub fn predicted_groups(&self) -> BTreeMap<TicketId, Option<TicketId>> {
        self.tickets
            .iter()
            .map(|(id, t)| (id.clone(), t.group.clone()))
            .collect()
    }

    pub fn predictions(&self) -> BTreeMap<TicketId, Prediction> {
        self.tickets
            .iter()
            .filter_map(|(id, t)| t.prediction.clone().map(|p| (id.clone(), p)))
            .collect()
    }

    /// Cross-checks tickets against the pool.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.pool.check_invariants()?;
        for t in self.tickets.values() {
            t.check_invariants()?;
            match t.state {
                TicketState::Escalated => {
                    let rec = self
                        .pool
                        .get(&t.id)
                        .ok_or(format!("{} escalated without record", t.id))?;
                    if Some(&rec.group) != t.group.as_ref() {
                        return Err(format!("{} group mismatch", t.id));
                    }
                }
                TicketState::Linked => {
                    let target = t.linked_to.as_ref().expect("checked by ticket invariants");
                    let owner = self
                        .tickets
                        .get(target)
                        .ok_or(format!("{} links to unknown {target}", t.id))?;
                    if owner.state != TicketState::Escalated {
                        return Err(format!("{} links to {target} in state {}", t.id, owner.state));
                    }
                    let rec = self.pool.get(target).ok_or(format!("{target} has no record"))?;
                    if !rec.linked.iter().any(|l| l.ticket_id == t.id) {
                        return Err(format!("{} missing from record {target}", t.id));
                    }
                }
                _ => {}
            }
        }
        for rec in self.pool.records() {
            for m in rec.members() {
                let want = if m == &rec.ticket_id {
                    TicketState::Escalated
                } else {
                    TicketState::Linked
                };
                match self.tickets.get(m) {
                    Some(t) if t.state == want => {}
                    _ => return Err(format!("pool member {m} is not {want}")),
                }
            }
        }
        let open_escalated = self
            .tickets
            .values()
            .filter(|t| t.state == TicketState::Escalated)
            .count();
        if self.pool.len() > open_escalated {
            return Err("pool larger than the number of escalated tickets".into());
        }
        Ok(())
    }
}

pub struct Engine<S: Scalar> {
    settings: PipelineSettings,
    chat: Arc<dyn ChatProvider>,
    embedder: Arc<dyn Embedder<S>>,
    examples: ExampleStore<S>,
    state: EngineState<S>,
}

impl<S: Scalar> Engine<S> {
    pub fn new(
        settings: PipelineSettings,
        chat: Arc<dyn ChatProvider>,
        embedder: Arc<dyn Embedder<S>>,
    ) -> Result<Self, DedupError> {
        let state = EngineState::new(settings.threshold)?;
        Ok(Self {
            settings,
            chat,
            embedder,
            examples: ExampleStore::new(),
            state,
        })
    }

    pub fn with_examples(mut self, examples: ExampleStore<S>) -> Self {
        self.examples = examples;
        self
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn state(&self) -> &EngineState<S> {
        &self.state
    }

    /// Replaces the folded state, e.g. with a restored snapshot.
    pub fn restore(&mut self, state: EngineState<S>) {
        self.state = state;
    }

    pub fn ticket(&self, id: &TicketId) -> Option<&Ticket> {
        self.state.tickets.get(id)
    }

    /// Checks that `event` may be applied to the current state.
    pub fn validate(&self, event: &IngestEvent) -> Result<(), IngestError> {
        let id = &event.ticket_id;
        let existing = self.state.tickets.get(id);
        match (&event.payload, existing) {
            (EventPayload::TicketCreated { .. }, Some(_)) => Err(IngestError::OutOfOrder(id.clone())),
            (EventPayload::TicketCreated { .. }, None) => Ok(()),
            (_, None) => Err(IngestError::UnknownTicket(id.clone())),
            (_, Some(t)) if !t.is_open() => Err(IngestError::TicketClosed(id.clone())),
            (EventPayload::MessageAppended { message }, Some(t)) => {
                if message.text.trim().is_empty() {
                    return Err(IngestError::InvalidEvent {
                        ticket: id.clone(),
                        reason: "empty message text".into(),
                    });
                }
                if t.transcript
                    .last()
                    .is_some_and(|last| last.timestamp > message.timestamp)
                {
                    return Err(IngestError::InvalidEvent {
                        ticket: id.clone(),
                        reason: "message timestamp precedes the previous message".into(),
                    });
                }
                Ok(())
            }
            (EventPayload::TicketClosed, Some(_)) => Ok(()),
        }
    }

    /// Validates and applies one event.
    pub fn ingest(&mut self, event: &IngestEvent) -> Result<Vec<Notice>, IngestError> {
        self.validate(event)?;
        let mut notices = Vec::new();
        match &event.payload {
            EventPayload::TicketCreated { title, .. } => {
                let state = TicketState::on_creation(&LifecycleEvent::Accepted)?;
                let ticket = Ticket::accept(event.ticket_id.clone(), title.clone(), event.timestamp);
                self.state.tickets.insert(event.ticket_id.clone(), ticket);
                notices.push(Notice::StateChanged {
                    ticket_id: event.ticket_id.clone(),
                    from: None,
                    to: state,
                });
            }
            EventPayload::MessageAppended { message } => {
                let ticket = self.ticket_mut(&event.ticket_id);
                ticket.transcript.push(message.clone());
                if ticket.state == TicketState::Active {
                    self.analysis_round(&event.ticket_id, event.timestamp, &mut notices)?;
                }
            }
            EventPayload::TicketClosed => self.close(&event.ticket_id, event.timestamp, &mut notices)?,
        }
        self.state.counters.processed += 1;
        Ok(notices)
    }

    fn ticket_mut(&mut self, id: &TicketId) -> &mut Ticket {
        self.state.tickets.get_mut(id).expect("validated ticket exists")
    }

    fn step(
        &mut self,
        id: &TicketId,
        now: Timestamp,
        event: LifecycleEvent,
        notices: &mut Vec<Notice>,
    ) -> Result<(), IngestError> {
        let ticket = self.ticket_mut(id);
        let from = ticket.state;
        let to = ticket.apply(&event)?;
        ticket.history.push(StateEntry { state: to, at: now });
        notices.push(Notice::StateChanged {
            ticket_id: id.clone(),
            from: Some(from),
            to,
        });
        Ok(())
    }

    fn analysis_round(&mut self, id: &TicketId, now: Timestamp, notices: &mut Vec<Notice>) -> Result<(), IngestError> {
        self.step(id, now, LifecycleEvent::NewDialogue, notices)?;
        self.state.counters.rounds += 1;

        let ticket = &self.state.tickets[id];
        let retrieved = self.retrieve_examples(ticket);
        let result = classify_with_examples(self.chat.as_ref(), &self.settings.prompt, ticket, &retrieved);
        let transcript_len = ticket.transcript.len();
        self.ticket_mut(id).prediction = Some(Prediction {
            category: result.category.clone(),
            thought: result.thought.clone(),
            transcript_len,
        });
        if !result.escalates() {
            return self.step(id, now, LifecycleEvent::ClassifiedOthers, notices);
        }
        self.step(
            id,
            now,
            LifecycleEvent::ClassifiedCategory(result.category.clone()),
            notices,
        )?;

        let ticket = &self.state.tickets[id];
        let issue = summarize_issue(self.chat.as_ref(), ticket, self.settings.prompt.max_messages());
        let embedding = self.embed_issue(id, &issue.text);
        self.ticket_mut(id).issue = Some(issue.clone());
        self.state.issue_embeddings.insert(id.clone(), embedding.clone());

        let resolution = self
            .state
            .pool
            .resolve_pending(id, &result.category, issue.clone(), embedding, now)?;
        notices.push(Notice::Resolved {
            ticket_id: id.clone(),
            decision: resolution.decision.clone(),
            best_similarity: resolution.best.as_ref().map(|(_, s)| s.to_f64_lossy()),
        });
        match resolution.decision {
            Decision::EscalateNew => {
                self.step(id, now, LifecycleEvent::NoSimilarFound, notices)?;
                self.ticket_mut(id).group = Some(id.clone());
                self.state.counters.escalated += 1;
                notices.push(Notice::Alert(AlertNotification {
                    ticket_id: id.clone(),
                    category: result.category,
                    issue_summary: issue,
                    group_size: 1,
                    link_url: format!("{}/tickets/{}", self.settings.link_base_url.trim_end_matches('/'), id),
                }));
            }
            Decision::LinkTo(owner) => {
                self.step(id, now, LifecycleEvent::SimilarFound(owner.clone()), notices)?;
                let group = self.state.pool.get(&owner).map(|r| r.group.clone());
                self.ticket_mut(id).group = group;
                self.state.counters.linked += 1;
                if self.settings.rewrite
                    && self
                        .state
                        .pool
                        .rewrite(&owner, self.chat.as_ref(), self.embedder.as_ref())
                {
                    self.state.counters.rewrites += 1;
                    let issue = self
                        .state
                        .pool
                        .get(&owner)
                        .expect("rewritten record exists")
                        .issue
                        .clone();
                    notices.push(Notice::Rewritten { owner, issue });
                }
            }
        }
        Ok(())
    }

    fn retrieve_examples(&self, ticket: &Ticket) -> Vec<IclExample> {
        if self.settings.icl_k == 0 || self.examples.is_empty() {
            return Vec::new();
        }
        match retrieve_icl_examples(
            &self.examples,
            ticket,
            self.settings.icl_k,
            self.embedder.as_ref(),
            self.settings.prompt.max_messages(),
        ) {
            Ok(found) => found.into_iter().map(|(e, _)| e).collect(),
            Err(e) => {
                tracing::warn!(ticket = %ticket.id, error = %e, "example retrieval failed");
                Vec::new()
            }
        }
    }

    /// Embeds an issue; if the embedder fails, a hashed bag-of-words of the
    /// same dimension keeps the round moving.
    fn embed_issue(&self, id: &TicketId, text: &str) -> Embedding<S> {
        match self.embedder.embed(text) {
            Ok(e) if e.dim() == self.embedder.dim() => e,
            other => {
                tracing::warn!(ticket = %id, result = ?other.err(), "issue embedding failed, using hashed fallback");
                HashedBagOfWords::new(self.embedder.dim().max(1))
                    .embed(text)
                    .or_else(|_| HashedBagOfWords::new(self.embedder.dim().max(1)).embed(id.as_str()))
                    .expect("fallback embedding of a non-empty id")
            }
        }
    }

    fn close(&mut self, id: &TicketId, now: Timestamp, notices: &mut Vec<Notice>) -> Result<(), IngestError> {
        self.step(id, now, LifecycleEvent::CustomerClosed, notices)?;
        self.state.counters.closed += 1;
        if let PoolDelta::Promoted {
            old_owner,
            new_owner,
            relinked,
        } = self.state.pool.on_close(id)
        {
            let promoted = self.ticket_mut(&new_owner);
            promoted.promote()?;
            promoted.history.push(StateEntry {
                state: TicketState::Escalated,
                at: now,
            });
            notices.push(Notice::StateChanged {
                ticket_id: new_owner.clone(),
                from: Some(TicketState::Linked),
                to: TicketState::Escalated,
            });
            for member in relinked {
                self.ticket_mut(&member).relink(new_owner.clone())?;
            }
            self.state.counters.promotions += 1;
            notices.push(Notice::Promoted { old_owner, new_owner });
        }
        Ok(())
    }

    /// CSV of per-ticket issue embeddings: `ticket_id,group_id,d0..d{n-1}`.
    /// Group representatives export the group's current (rewritten) embedding.
    pub fn embeddings_csv(&self) -> String {
        let dim = self.embedder.dim();
        let mut out = String::from("ticket_id,group_id");
        for i in 0..dim {
            out.push_str(&format!(",d{i}"));
        }
        out.push('\n');
        for (id, own) in &self.state.issue_embeddings {
            let ticket = &self.state.tickets[id];
            let vector = self.state.pool.get(id).map_or(own, |r| &r.embedding);
            let group = ticket.group.as_ref().map_or("", TicketId::as_str);
            out.push_str(&format!("{id},{group}"));
            for x in vector.as_slice() {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

impl<S: Scalar> FeedbackTargets for Engine<S> {
    fn accepts_feedback(&self, ticket: &TicketId) -> bool {
        self.state.tickets.get(ticket).is_some_and(|t| t.group.is_some())
    }

    fn canonical_category(&self, name: &str) -> Option<String> {
        self.settings.prompt.canonical_category(name).map(str::to_owned)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mock::MockProvider;
    use crate::provider::ScriptedProvider;
    use crate::ticket::OTHERS;

    fn id(s: &str) -> TicketId {
        TicketId::new(s).unwrap()
    }

    fn engine() -> Engine<f64> {
        Engine::new(
            PipelineSettings::default(),
            Arc::new(MockProvider::default()),
            Arc::new(HashedBagOfWords::default()),
        )
        .unwrap()
    }

    fn alerts(n: &[Notice]) -> usize {
        n.iter().filter(|n| matches!(n, Notice::Alert(_))).count()
    }

    #[test]
    fn event_wire_format() {
        let ev = IngestEvent::message(id("t1"), Message::customer("hi", 5));
        let json = serde_json::to_string(&ev).unwrap();
        assert_eq!(
            json,
            r#"{"ticket_id":"t1","timestamp":5,"kind":"message_appended","message":{"author":"customer","text":"hi","timestamp":5}}"#
        );
        assert_eq!(serde_json::from_str::<IngestEvent>(&json).unwrap(), ev);
        let closed: IngestEvent =
            serde_json::from_str(r#"{"kind":"ticket_closed","ticket_id":"t1","timestamp":9}"#).unwrap();
        assert_eq!(closed, IngestEvent::closed(id("t1"), 9));
    }

    #[test]
    fn benign_rounds_stay_active() {
        let mut e = engine();
        e.ingest(&IngestEvent::created(id("t1"), "question", 0)).unwrap();
        let mut total_alerts = 0;
        for (i, text) in ["hello", "how do I export billing documentation", "thanks, found it"]
            .iter()
            .enumerate()
        {
            total_alerts += alerts(
                &e.ingest(&IngestEvent::message(id("t1"), Message::customer(*text, i as i64 + 1)))
                    .unwrap(),
            );
        }
        let t = e.ticket(&id("t1")).unwrap();
        assert_eq!(t.state, TicketState::Active);
        assert_eq!(t.prediction.as_ref().unwrap().category, OTHERS);
        assert_eq!(total_alerts, 0);
        assert_eq!(e.state().counters.rounds, 3);
        e.state().check_invariants().unwrap();
    }

    #[test]
    fn identical_issues_alert_once_and_link() {
        let mut e = engine();
        let text = "our GPU instances fail to start since 10am";
        let mut n = 0;
        for t in ["a", "b"] {
            e.ingest(&IngestEvent::created(id(t), "gpu", 0)).unwrap();
            n += alerts(
                &e.ingest(&IngestEvent::message(id(t), Message::customer(text, 1)))
                    .unwrap(),
            );
        }
        assert_eq!(n, 1);
        assert_eq!(e.ticket(&id("a")).unwrap().state, TicketState::Escalated);
        let b = e.ticket(&id("b")).unwrap();
        assert_eq!(b.state, TicketState::Linked);
        assert_eq!(b.linked_to, Some(id("a")));
        assert_eq!(b.group, Some(id("a")));
        assert_eq!(e.state().pool.get(&id("a")).unwrap().rewrites, 1);
        e.state().check_invariants().unwrap();
    }

    #[test]
    fn escalated_ticket_only_grows_transcript() {
        let mut e = engine();
        e.ingest(&IngestEvent::created(id("a"), "db", 0)).unwrap();
        e.ingest(&IngestEvent::message(id("a"), Message::customer("database outage", 1)))
            .unwrap();
        let rounds = e.state().counters.rounds;
        let n = e
            .ingest(&IngestEvent::message(id("a"), Message::customer("still an outage", 2)))
            .unwrap();
        assert!(n.is_empty());
        assert_eq!(e.state().counters.rounds, rounds);
        assert_eq!(e.ticket(&id("a")).unwrap().transcript.len(), 2);
    }

    #[test]
    fn ingest_errors() {
        let mut e = engine();
        assert!(matches!(
            e.ingest(&IngestEvent::message(id("x"), Message::customer("hi", 0))),
            Err(IngestError::UnknownTicket(_))
        ));
        e.ingest(&IngestEvent::created(id("x"), "t", 0)).unwrap();
        assert!(matches!(
            e.ingest(&IngestEvent::created(id("x"), "t", 0)),
            Err(IngestError::OutOfOrder(_))
        ));
        assert!(matches!(
            e.ingest(&IngestEvent::message(id("x"), Message::customer("  ", 1))),
            Err(IngestError::InvalidEvent { .. })
        ));
        e.ingest(&IngestEvent::message(id("x"), Message::customer("hi", 5)))
            .unwrap();
        assert!(matches!(
            e.ingest(&IngestEvent::message(id("x"), Message::customer("hi", 4))),
            Err(IngestError::InvalidEvent { .. })
        ));
        e.ingest(&IngestEvent::closed(id("x"), 6)).unwrap();
        assert!(matches!(
            e.ingest(&IngestEvent::closed(id("x"), 7)),
            Err(IngestError::TicketClosed(_))
        ));
        assert_eq!(e.state().counters.processed, 3);
    }

    #[test]
    fn closing_representative_promotes_oldest_link() {
        let mut e = engine();
        let text = "object storage returns 503 errors in region east";
        for (i, t) in ["a", "b", "c"].iter().enumerate() {
            e.ingest(&IngestEvent::created(id(t), "s3", i as i64)).unwrap();
            e.ingest(&IngestEvent::message(id(t), Message::customer(text, 10 + i as i64)))
                .unwrap();
        }
        let notices = e.ingest(&IngestEvent::closed(id("a"), 20)).unwrap();
        assert!(notices.contains(&Notice::Promoted {
            old_owner: id("a"),
            new_owner: id("b")
        }));
        assert_eq!(e.ticket(&id("b")).unwrap().state, TicketState::Escalated);
        assert_eq!(e.ticket(&id("c")).unwrap().linked_to, Some(id("b")));
        assert_eq!(e.ticket(&id("c")).unwrap().group, Some(id("a")));
        assert_eq!(e.state().pool.len(), 1);
        e.state().check_invariants().unwrap();

        e.ingest(&IngestEvent::closed(id("c"), 21)).unwrap();
        assert_eq!(e.state().pool.get(&id("b")).unwrap().group_size(), 1);
        e.ingest(&IngestEvent::closed(id("b"), 22)).unwrap();
        assert!(e.state().pool.is_empty());
        e.state().check_invariants().unwrap();
    }

    #[test]
    fn malformed_classifier_never_escalates() {
        let p = Arc::new(ScriptedProvider::new(["garbage", "{\"category\": \"Outage\"}"]));
        let mut e: Engine<f64> = Engine::new(
            PipelineSettings::default(),
            p.clone(),
            Arc::new(HashedBagOfWords::default()),
        )
        .unwrap();
        e.ingest(&IngestEvent::created(id("a"), "x", 0)).unwrap();
        let n = e
            .ingest(&IngestEvent::message(
                id("a"),
                Message::customer("massive outage, data breach", 1),
            ))
            .unwrap();
        assert_eq!(alerts(&n), 0);
        assert_eq!(e.ticket(&id("a")).unwrap().state, TicketState::Active);
        assert_eq!(p.call_count(), 2);
    }

    #[test]
    fn feedback_targets() {
        let mut e = engine();
        e.ingest(&IngestEvent::created(id("a"), "x", 0)).unwrap();
        assert!(!e.accepts_feedback(&id("a")));
        e.ingest(&IngestEvent::message(
            id("a"),
            Message::customer("unauthorized login attack", 1),
        ))
        .unwrap();
        assert!(e.accepts_feedback(&id("a")));
        assert_eq!(e.canonical_category("asset loss").as_deref(), Some("Asset Loss"));
    }

    #[test]
    fn embeddings_export() {
        let mut e: Engine<f64> = Engine::new(
            PipelineSettings::default(),
            Arc::new(MockProvider::default()),
            Arc::new(HashedBagOfWords::new(4)),
        )
        .unwrap();
        e.ingest(&IngestEvent::created(id("a"), "x", 0)).unwrap();
        e.ingest(&IngestEvent::message(id("a"), Message::customer("database outage", 1)))
            .unwrap();
        let csv = e.embeddings_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "ticket_id,group_id,d0,d1,d2,d3");
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("a,a,"));
        assert_eq!(lines[1].split(',').count(), 6);
    }
}
