//! HTTP providers against a local stand-in server. The blocking clients run
//! on the test thread; the server runs on its own runtime thread.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use escalation_core::classifier::{classify, PromptSpec};
use escalation_core::embedding::{Embedder, EmbeddingError, HashedBagOfWords};
use escalation_core::engine::{Engine, IngestEvent, PipelineSettings};
use escalation_core::eval::{generate_corpus, SyntheticCorpusSpec};
use escalation_core::mock::MockProvider;
use escalation_core::provider::{ChatMessage, ChatProvider, ProviderError};
use escalation_core::store::replay;
use escalation_core::ticket::{Message, Ticket, TicketId};
use escalation_service::providers::{HttpChatProvider, HttpEmbedder};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Upstream {
    requests: Arc<Mutex<Vec<Value>>>,
    mock: Arc<MockProvider>,
    embed: HashedBagOfWords,
}

async fn chat(State(u): State<Upstream>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    u.requests.lock().unwrap().push(body.clone());
    let Ok(messages) = serde_json::from_value::<Vec<ChatMessage>>(body["messages"].clone()) else {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "messages"})));
    };
    let t = body["temperature"].as_f64().unwrap_or(0.0);
    let Ok(content) = u.mock.complete(&messages, t) else {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "mock"})));
    };
    (
        StatusCode::OK,
        Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]})),
    )
}

async fn embed(State(u): State<Upstream>, Json(body): Json<Value>) -> Json<Value> {
    u.requests.lock().unwrap().push(body.clone());
    let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    // answer in reverse order to exercise index sorting
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, text)| {
            let e: escalation_core::embedding::Embedding<f64> = u.embed.embed(text).unwrap();
            json!({"index": i, "embedding": e.as_slice()})
        })
        .collect();
    Json(json!({"data": data}))
}

fn spawn_upstream(u: Upstream) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let app = Router::new()
                .route("/v1/chat/completions", post(chat))
                .route("/v1/embeddings", post(embed))
                .route(
                    "/broken",
                    post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }),
                )
                .route("/empty", post(|| async { Json(json!({"choices": []})) }))
                .route(
                    "/short",
                    post(|| async { Json(json!({"data": [{"embedding": [1.0, 0.0]}]})) }),
                )
                .with_state(u);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

const TIMEOUT: Duration = Duration::from_secs(5);

#[test]
fn chat_request_uses_the_documented_field_names() {
    let u = Upstream::default();
    let addr = spawn_upstream(u.clone());
    let p = HttpChatProvider::new(
        format!("http://{addr}/v1/chat/completions"),
        "m-1",
        Some("secret".into()),
        TIMEOUT,
    );
    let msgs = [ChatMessage::system("be brief"), ChatMessage::user("hello")];
    // the stand-in rejects untagged prompts; only the request matters here
    let _ = p.complete(&msgs, 0.3);
    let req = u.requests.lock().unwrap()[0].clone();
    let mut keys: Vec<&str> = req.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["messages", "model", "temperature"]);
    assert_eq!(req["model"], "m-1");
    assert_eq!(req["temperature"], 0.3);
    assert_eq!(
        req["messages"],
        json!([{"role": "system", "content": "be brief"}, {"role": "user", "content": "hello"}])
    );
}

#[test]
fn chat_over_http_matches_the_mock_it_fronts() {
    let u = Upstream::default();
    let addr = spawn_upstream(u.clone());
    let p = HttpChatProvider::new(format!("http://{addr}/v1/chat/completions"), "m", None, TIMEOUT);
    let direct = MockProvider::default();
    let mut ticket = Ticket::accept(TicketId::new("t").unwrap(), "help", 0);
    ticket
        .transcript
        .push(Message::customer("our database instance crashed with errors", 1));
    let spec = PromptSpec::default();
    let (remote, local) = (classify(&p, &spec, &ticket), classify(&direct, &spec, &ticket));
    assert_eq!(remote, local);
    assert_eq!(remote.category, "System Failure");
}

#[test]
fn chat_errors_are_typed() {
    let addr = spawn_upstream(Upstream::default());
    let msgs = [ChatMessage::user("x")];
    let broken = HttpChatProvider::new(format!("http://{addr}/broken"), "m", None, TIMEOUT);
    assert!(matches!(broken.complete(&msgs, 0.0), Err(ProviderError::BadResponse(m)) if m.contains("500")));
    let empty = HttpChatProvider::new(format!("http://{addr}/empty"), "m", None, TIMEOUT);
    assert!(matches!(empty.complete(&msgs, 0.0), Err(ProviderError::BadResponse(_))));
    // nothing listens on port 9 of localhost
    let down = HttpChatProvider::new("http://127.0.0.1:9/x", "m", None, TIMEOUT);
    assert!(matches!(down.complete(&msgs, 0.0), Err(ProviderError::Transport(_))));
}

#[test]
fn embedding_batch_keeps_input_order_and_checks_dimension() {
    let u = Upstream::default();
    let addr = spawn_upstream(u.clone());
    let e = HttpEmbedder::new(
        format!("http://{addr}/v1/embeddings"),
        "emb",
        None,
        HashedBagOfWords::DEFAULT_DIM,
        TIMEOUT,
    );
    let texts = ["disk failure", "login outage", "refund delay"];
    let got = e.embed_batch(&texts).unwrap();
    for (text, v) in texts.iter().zip(&got) {
        let want: escalation_core::embedding::Embedding<f64> = HashedBagOfWords::default().embed(text).unwrap();
        assert_eq!(v, &want);
    }
    let req = u.requests.lock().unwrap()[0].clone();
    assert_eq!(req, json!({"model": "emb", "input": texts}));

    let short = HttpEmbedder::new(format!("http://{addr}/short"), "emb", None, 8, TIMEOUT);
    assert_eq!(
        short.embed("x").unwrap_err(),
        EmbeddingError::DimensionMismatch { left: 2, right: 8 }
    );
    assert_eq!(e.embed("  ").unwrap_err(), EmbeddingError::EmptyText);
}

#[test]
fn engine_over_http_providers_folds_like_the_mocks() {
    let addr = spawn_upstream(Upstream::default());
    let corpus = generate_corpus(&SyntheticCorpusSpec {
        n_groups: 4,
        tickets_per_group: (3, 3),
        paraphrase_noise: 0.05,
        ..SyntheticCorpusSpec::default()
    })
    .unwrap();
    let events: Vec<IngestEvent> = corpus.events;
    let mut remote: Engine<f64> = Engine::new(
        PipelineSettings::default(),
        Arc::new(HttpChatProvider::new(
            format!("http://{addr}/v1/chat/completions"),
            "m",
            None,
            TIMEOUT,
        )),
        Arc::new(HttpEmbedder::new(
            format!("http://{addr}/v1/embeddings"),
            "e",
            None,
            HashedBagOfWords::DEFAULT_DIM,
            TIMEOUT,
        )),
    )
    .unwrap();
    let mut local: Engine<f64> = Engine::new(
        PipelineSettings::default(),
        Arc::new(MockProvider::default()),
        Arc::new(HashedBagOfWords::default()),
    )
    .unwrap();
    assert_eq!(replay(&mut remote, &events), replay(&mut local, &events));
    assert_eq!(remote.state().to_json(), local.state().to_json());
    assert!(local.state().counters.escalated > 0);
}
