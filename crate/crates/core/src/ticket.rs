//! Ticket domain types and the lifecycle state machine.
//!
//! A ticket is accepted into `Active`, enters `Analyzing` whenever new
//! dialogue arrives, returns to `Active` when classified as "Others", or moves
//! to `Pending` for deduplication. From `Pending` it becomes either
//! `Escalated` (a new unique issue) or `Linked` (a duplicate of an escalated
//! ticket). Every non-closed state may be closed by the customer.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::IssueSummary;

/// Reserved category name for tickets that do not need escalation.
pub const OTHERS: &str = "Others";

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TicketId(String);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("ticket id must be non-empty")]
pub struct EmptyTicketId;

impl TicketId {
    pub fn new(id: impl Into<String>) -> Result<Self, EmptyTicketId> {
        let id = id.into();
        if id.is_empty() {
            return Err(EmptyTicketId);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TicketId {
    type Error = EmptyTicketId;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl TryFrom<&str> for TicketId {
    type Error = EmptyTicketId;
    fn try_from(value: &str) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<TicketId> for String {
    fn from(id: TicketId) -> Self {
        id.0
    }
}

impl fmt::Display for TicketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Customer,
    Analyst,
}

impl Author {
    pub fn as_str(self) -> &'static str {
        match self {
            Author::Customer => "customer",
            Author::Analyst => "analyst",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub author: Author,
    pub text: String,
    pub timestamp: Timestamp,
}

impl Message {
    pub fn new(author: Author, text: impl Into<String>, timestamp: Timestamp) -> Self {
        Self {
            author,
            text: text.into(),
            timestamp,
        }
    }

    pub fn customer(text: impl Into<String>, timestamp: Timestamp) -> Self {
        Self::new(Author::Customer, text, timestamp)
    }

    pub fn analyst(text: impl Into<String>, timestamp: Timestamp) -> Self {
        Self::new(Author::Analyst, text, timestamp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TicketState {
    Active,
    Analyzing,
    Pending,
    Escalated,
    Linked,
    Closed,
}

impl TicketState {
    pub const ALL: [TicketState; 6] = [
        TicketState::Active,
        TicketState::Analyzing,
        TicketState::Pending,
        TicketState::Escalated,
        TicketState::Linked,
        TicketState::Closed,
    ];

    /// The state a freshly created ticket enters on `event`; only `Accepted` is legal.
    pub fn on_creation(event: &LifecycleEvent) -> Result<TicketState, LifecycleError> {
        match event {
            LifecycleEvent::Accepted => Ok(TicketState::Active),
            other => Err(LifecycleError::IllegalCreation(other.kind())),
        }
    }

    /// Pure transition function over the lifecycle graph.
    pub fn next(self, event: &LifecycleEvent) -> Result<TicketState, LifecycleError> {
        use LifecycleEvent as E;
        use TicketState as S;
        let next = match (self, event) {
            (S::Closed, _) => None,
            (_, E::CustomerClosed) => Some(S::Closed),
            (S::Active, E::NewDialogue) => Some(S::Analyzing),
            (S::Analyzing, E::ClassifiedOthers) => Some(S::Active),
            (S::Analyzing, E::ClassifiedCategory(_)) => Some(S::Pending),
            (S::Pending, E::NoSimilarFound) => Some(S::Escalated),
            (S::Pending, E::SimilarFound(_)) => Some(S::Linked),
            _ => None,
        };
        next.ok_or(LifecycleError::IllegalTransition {
            state: self,
            event: event.kind(),
        })
    }

    /// States in which a ticket carries a category.
    pub fn carries_category(self) -> bool {
        matches!(
            self,
            TicketState::Pending | TicketState::Escalated | TicketState::Linked
        )
    }
}

impl fmt::Display for TicketState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifecycleEvent {
    Accepted,
    NewDialogue,
    ClassifiedOthers,
    ClassifiedCategory(String),
    NoSimilarFound,
    SimilarFound(TicketId),
    CustomerClosed,
}

/// Payload-free discriminant of [`LifecycleEvent`], used in error reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Accepted,
    NewDialogue,
    ClassifiedOthers,
    ClassifiedCategory,
    NoSimilarFound,
    SimilarFound,
    CustomerClosed,
}

impl EventKind {
    pub const ALL: [EventKind; 7] = [
        EventKind::Accepted,
        EventKind::NewDialogue,
        EventKind::ClassifiedOthers,
        EventKind::ClassifiedCategory,
        EventKind::NoSimilarFound,
        EventKind::SimilarFound,
        EventKind::CustomerClosed,
    ];
}

impl LifecycleEvent {
    pub fn kind(&self) -> EventKind {
        match self {
            LifecycleEvent::Accepted => EventKind::Accepted,
            LifecycleEvent::NewDialogue => EventKind::NewDialogue,
            LifecycleEvent::ClassifiedOthers => EventKind::ClassifiedOthers,
            LifecycleEvent::ClassifiedCategory(_) => EventKind::ClassifiedCategory,
            LifecycleEvent::NoSimilarFound => EventKind::NoSimilarFound,
            LifecycleEvent::SimilarFound(_) => EventKind::SimilarFound,
            LifecycleEvent::CustomerClosed => EventKind::CustomerClosed,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("illegal transition: {event:?} in state {state}")]
    IllegalTransition { state: TicketState, event: EventKind },
    #[error("a new ticket must be accepted first, got {0:?}")]
    IllegalCreation(EventKind),
    #[error("ticket {0} cannot link to itself")]
    SelfLink(TicketId),
    #[error("ticket {0} is not linked")]
    NotLinked(TicketId),
}

/// The classification that drove the ticket's latest analysis round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub category: String,
    pub thought: String,
    /// Number of transcript messages visible to the classifier.
    pub transcript_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ticket {
    pub id: TicketId,
    pub title: String,
    pub transcript: Vec<Message>,
    pub state: TicketState,
    pub category: Option<String>,
    pub issue: Option<IssueSummary>,
    pub linked_to: Option<TicketId>,
    /// Founding ticket of the escalation group this ticket joined; kept after close.
    pub group: Option<TicketId>,
    pub prediction: Option<Prediction>,
    pub created_at: Timestamp,
    /// Every state entered, oldest first, starting with `Active` at creation.
    #[serde(default)]
    pub history: Vec<StateEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub state: TicketState,
    pub at: Timestamp,
}

impl Ticket {
    /// Creates a ticket in `Active` (the `Accepted` arrow of the lifecycle).
    pub fn accept(id: TicketId, title: impl Into<String>, created_at: Timestamp) -> Self {
        Self {
            id,
            title: title.into(),
            transcript: Vec::new(),
            state: TicketState::Active,
            category: None,
            issue: None,
            linked_to: None,
            group: None,
            prediction: None,
            created_at,
            history: vec![StateEntry {
                state: TicketState::Active,
                at: created_at,
            }],
        }
    }

    pub fn is_open(&self) -> bool {
        self.state != TicketState::Closed
    }

    /// Applies a lifecycle event, updating state and the fields tied to it.
    pub fn apply(&mut self, event: &LifecycleEvent) -> Result<TicketState, LifecycleError> {
        if let LifecycleEvent::SimilarFound(target) = event {
            if *target == self.id {
                return Err(LifecycleError::SelfLink(self.id.clone()));
            }
        }
        let next = self.state.next(event)?;
        match event {
            LifecycleEvent::ClassifiedOthers | LifecycleEvent::CustomerClosed => {
                self.category = None;
                self.linked_to = None;
            }
            LifecycleEvent::ClassifiedCategory(c) => self.category = Some(c.clone()),
            LifecycleEvent::SimilarFound(target) => self.linked_to = Some(target.clone()),
            _ => {}
        }
        self.state = next;
        Ok(next)
    }

    /// Promotes a linked ticket to group representative after its representative closed.
    pub(crate) fn promote(&mut self) -> Result<(), LifecycleError> {
        if self.state != TicketState::Linked {
            return Err(LifecycleError::NotLinked(self.id.clone()));
        }
        self.state = TicketState::Escalated;
        self.linked_to = None;
        Ok(())
    }

    pub(crate) fn relink(&mut self, target: TicketId) -> Result<(), LifecycleError> {
        if self.state != TicketState::Linked {
            return Err(LifecycleError::NotLinked(self.id.clone()));
        }
        if target == self.id {
            return Err(LifecycleError::SelfLink(target));
        }
        self.linked_to = Some(target);
        Ok(())
    }

    /// Checks the per-ticket invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.category.is_some() != self.state.carries_category() {
            return Err(format!(
                "{}: category {:?} in state {}",
                self.id, self.category, self.state
            ));
        }
        if self.linked_to.is_some() != (self.state == TicketState::Linked) {
            return Err(format!(
                "{}: linked_to {:?} in state {}",
                self.id, self.linked_to, self.state
            ));
        }
        if self.linked_to.as_ref() == Some(&self.id) {
            return Err(format!("{}: links to itself", self.id));
        }
        if self.transcript.windows(2).any(|w| w[0].timestamp > w[1].timestamp) {
            return Err(format!("{}: transcript timestamps decrease", self.id));
        }
        Ok(())
    }
}

/// Consuming form of [`Ticket::apply`].
pub fn transition(mut ticket: Ticket, event: &LifecycleEvent) -> Result<Ticket, LifecycleError> {
    ticket.apply(event)?;
    Ok(ticket)
}
