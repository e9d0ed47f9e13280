//! HTTP and server-sent-event API.
//!
//! Ingestion and feedback go through one mutex around the durable engine
//! and the feedback ledger, so every event is logged and applied in a single
//! order and notices reach `/stream` in that order, before the request that
//! produced them returns.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use escalation_core::classifier::TicketCategory;
use escalation_core::dedup::{IssueSummary, LinkedIssue};
use escalation_core::engine::{Counters, IngestError, IngestEvent, Notice};
use escalation_core::feedback::{FeedbackError, FeedbackEvent, FeedbackLedger};
use escalation_core::store::StoreError;
use escalation_core::ticket::{Ticket, TicketId, TicketState, Timestamp};
use escalation_core::DefaultDurableEngine;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::alerts::WebhookDispatcher;

const STREAM_CAPACITY: usize = 1024;

pub struct Core {
    pub engine: DefaultDurableEngine,
    pub ledger: FeedbackLedger,
}

pub struct AppState {
    core: Mutex<Core>,
    notices: broadcast::Sender<Notice>,
    webhooks: Option<WebhookDispatcher>,
}

impl AppState {
    pub fn new(engine: DefaultDurableEngine, ledger: FeedbackLedger, webhooks: Option<WebhookDispatcher>) -> Arc<Self> {
        let (notices, _) = broadcast::channel(STREAM_CAPACITY);
        Arc::new(Self {
            core: Mutex::new(Core { engine, ledger }),
            notices,
            webhooks,
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, Core> {
        // a panic mid-ingest leaves the log ahead of memory; the next restore reconciles it
        self.core.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Notice> {
        self.notices.subscribe()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.code,
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::Ingest(IngestError::UnknownTicket(_)) => Self::not_found(message),
            StoreError::Ingest(IngestError::OutOfOrder(_) | IngestError::TicketClosed(_)) => {
                Self::new(StatusCode::CONFLICT, "conflict", message)
            }
            StoreError::Ingest(IngestError::InvalidEvent { .. }) => Self::bad_request(message),
            _ => Self::internal(message),
        }
    }
}

impl From<FeedbackError> for ApiError {
    fn from(e: FeedbackError) -> Self {
        let message = e.to_string();
        match e {
            FeedbackError::UnknownTicket(_) => Self::new(StatusCode::CONFLICT, "not_escalated", message),
            FeedbackError::CorrectionWithoutDownvote | FeedbackError::UnknownCategory(_) => Self::bad_request(message),
            FeedbackError::Io(_) => Self::internal(message),
        }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

fn ticket_id(raw: &str) -> Result<TicketId, ApiError> {
    TicketId::new(raw).map_err(|_| ApiError::bad_request("empty ticket id"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/events", post(post_event))
        .route("/tickets", get(list_tickets))
        .route("/tickets/{id}", get(get_ticket))
        .route("/escalations", get(list_escalations))
        .route("/feedback", post(post_feedback))
        .route("/metrics", get(metrics))
        .route("/categories", get(categories))
        .route("/embeddings.csv", get(embeddings_csv))
        .route("/stream", get(stream_notices))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IngestAck {
    /// Log position after this event.
    pub position: u64,
    pub notices: Vec<Notice>,
}

async fn post_event(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<IngestAck>, ApiError> {
    let event: IngestEvent = parse(&body)?;
    let worker = app.clone();
    // rounds may call blocking providers
    let ack = tokio::task::spawn_blocking(move || -> Result<IngestAck, ApiError> {
        let mut core = worker.lock();
        let notices = core.engine.ingest(&event)?;
        for n in &notices {
            // no subscribers is fine
            let _ = worker.notices.send(n.clone());
        }
        Ok(IngestAck {
            position: core.engine.log_position(),
            notices,
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    if let Some(hooks) = &app.webhooks {
        for n in &ack.notices {
            if let Notice::Alert(alert) = n {
                hooks.spawn(alert.clone());
            }
        }
    }
    Ok(Json(ack))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketSummary {
    pub id: TicketId,
    pub title: String,
    pub state: TicketState,
    pub category: Option<String>,
    pub group: Option<TicketId>,
    pub linked_to: Option<TicketId>,
    pub messages: usize,
    pub created_at: Timestamp,
}

impl From<&Ticket> for TicketSummary {
    fn from(t: &Ticket) -> Self {
        Self {
            id: t.id.clone(),
            title: t.title.clone(),
            state: t.state,
            category: t.category.clone(),
            group: t.group.clone(),
            linked_to: t.linked_to.clone(),
            messages: t.transcript.len(),
            created_at: t.created_at,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TicketFilter {
    state: Option<TicketState>,
}

async fn list_tickets(
    State(app): State<Arc<AppState>>,
    filter: Result<Query<TicketFilter>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Vec<TicketSummary>>, ApiError> {
    let Query(filter) = filter.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let core = app.lock();
    Ok(Json(
        core.engine
            .engine()
            .state()
            .tickets
            .values()
            .filter(|t| filter.state.is_none_or(|s| t.state == s))
            .map(TicketSummary::from)
            .collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    pub id: TicketId,
    pub title: String,
    pub state: TicketState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupView {
    /// Founding ticket; identifies the group.
    pub group: TicketId,
    /// Current representative, if the group still has an open one.
    pub owner: Option<TicketId>,
    /// The group's current (possibly rewritten) issue.
    pub issue: Option<IssueSummary>,
    pub members: Vec<GroupMember>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketDetail {
    pub ticket: Ticket,
    pub group: Option<GroupView>,
    pub feedback: Vec<FeedbackEvent>,
}

async fn get_ticket(State(app): State<Arc<AppState>>, Path(raw): Path<String>) -> Result<Json<TicketDetail>, ApiError> {
    let id = ticket_id(&raw)?;
    let core = app.lock();
    let state = core.engine.engine().state();
    let ticket = state
        .tickets
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown ticket {id}")))?;
    let group = ticket.group.as_ref().map(|g| {
        let record = state.pool.records().find(|r| &r.group == g);
        GroupView {
            group: g.clone(),
            owner: record.map(|r| r.ticket_id.clone()),
            issue: record.map(|r| r.issue.clone()),
            members: state
                .tickets
                .values()
                .filter(|t| t.group.as_ref() == Some(g))
                .map(|t| GroupMember {
                    id: t.id.clone(),
                    title: t.title.clone(),
                    state: t.state,
                })
                .collect(),
        }
    });
    let feedback = core
        .ledger
        .events()
        .iter()
        .filter(|e| e.ticket_id == id)
        .cloned()
        .collect();
    Ok(Json(TicketDetail {
        ticket: ticket.clone(),
        group,
        feedback,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationView {
    pub ticket_id: TicketId,
    pub group: TicketId,
    pub category: String,
    pub issue: IssueSummary,
    pub owner_issue: IssueSummary,
    pub linked: Vec<LinkedIssue>,
    pub group_size: usize,
    pub created_at: Timestamp,
    pub rewrites: u32,
    pub link_url: String,
}

async fn list_escalations(State(app): State<Arc<AppState>>) -> Json<Vec<EscalationView>> {
    let core = app.lock();
    let engine = core.engine.engine();
    let base = engine.settings().link_base_url.trim_end_matches('/').to_owned();
    let mut out: Vec<EscalationView> = engine
        .state()
        .pool
        .records()
        .map(|r| EscalationView {
            ticket_id: r.ticket_id.clone(),
            group: r.group.clone(),
            category: r.category.clone(),
            issue: r.issue.clone(),
            owner_issue: r.owner_issue.clone(),
            linked: r.linked.clone(),
            group_size: r.group_size(),
            created_at: r.created_at,
            rewrites: r.rewrites,
            link_url: format!("{base}/tickets/{}", r.ticket_id),
        })
        .collect();
    out.sort_by(|a, b| (a.created_at, &a.ticket_id).cmp(&(b.created_at, &b.ticket_id)));
    Json(out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackAck {
    /// Position of the event in the ledger.
    pub position: usize,
    pub ledger_len: usize,
}

async fn post_feedback(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Json<FeedbackAck>, ApiError> {
    let event: FeedbackEvent = parse(&body)?;
    let mut core = app.lock();
    let Core { engine, ledger } = &mut *core;
    if engine.engine().ticket(&event.ticket_id).is_none() {
        return Err(ApiError::not_found(format!("unknown ticket {}", event.ticket_id)));
    }
    let position = ledger.record(event, engine.engine())?;
    Ok(Json(FeedbackAck {
        position,
        ledger_len: ledger.len(),
    }))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub counters: Counters,
    pub log_position: u64,
    pub open_escalations: usize,
    pub feedback_events: usize,
}

async fn metrics(State(app): State<Arc<AppState>>) -> Json<Metrics> {
    let core = app.lock();
    let state = core.engine.engine().state();
    Json(Metrics {
        counters: state.counters.clone(),
        log_position: core.engine.log_position(),
        open_escalations: state.pool.len(),
        feedback_events: core.ledger.len(),
    })
}

async fn categories(State(app): State<Arc<AppState>>) -> Json<Vec<TicketCategory>> {
    let core = app.lock();
    Json(core.engine.engine().settings().prompt.categories().to_vec())
}

async fn embeddings_csv(State(app): State<Arc<AppState>>) -> impl IntoResponse {
    let csv = app.lock().engine.engine().embeddings_csv();
    ([(header::CONTENT_TYPE, "text/csv")], csv)
}

fn notice_event(n: &Notice) -> Event {
    let name = match n {
        Notice::StateChanged { .. } => "state_changed",
        Notice::Alert(_) => "alert",
        Notice::Resolved { .. } => "resolved",
        Notice::Rewritten { .. } => "rewritten",
        Notice::Promoted { .. } => "promoted",
    };
    Event::default()
        .event(name)
        .json_data(n)
        .unwrap_or_else(|_| Event::default().event("error"))
}

/// Live notices. A subscriber that falls behind gets a `lagged` event and
/// should backfill from `/escalations`.
async fn stream_notices(State(app): State<Arc<AppState>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = app.subscribe();
    let events = stream::unfold(rx, |mut rx| async move {
        let event = match rx.recv().await {
            Ok(n) => notice_event(&n),
            Err(broadcast::error::RecvError::Lagged(missed)) => {
                Event::default().event("lagged").data(missed.to_string())
            }
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(event), rx))
    });
    Sse::new(events).keep_alive(KeepAlive::new().interval(Duration::from_secs(15)))
}
