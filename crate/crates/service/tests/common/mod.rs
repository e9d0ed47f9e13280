#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use escalation_service::alerts::WebhookDispatcher;
use escalation_service::api::{router, AppState};
use escalation_service::commands::open_data_dir;
use escalation_service::config::{ConfigLayer, EngineConfig};
use serde_json::Value;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub fn config(dir: &Path) -> EngineConfig {
    EngineConfig::resolve(ConfigLayer {
        data_dir: Some(dir.to_path_buf()),
        snapshot_every: Some(5),
        ..ConfigLayer::default()
    })
    .unwrap()
}

/// A running API server over `cfg.data_dir`; dropping `stop` shuts it down.
pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl Server {
    pub async fn start(cfg: &EngineConfig, webhooks: Option<WebhookDispatcher>) -> Server {
        let c = cfg.clone();
        let (engine, ledger) = tokio::task::spawn_blocking(move || open_data_dir(&c))
            .await
            .unwrap()
            .unwrap();
        let state = AppState::new(engine, ledger, webhooks);
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = oneshot::channel();
        let app = router(state.clone());
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
        Server {
            base: format!("http://{addr}"),
            state,
            stop: Some(tx),
            task: Some(task),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        // open SSE connections keep graceful shutdown waiting
        let task = self.task.take().unwrap();
        let _ = tokio::time::timeout(Duration::from_secs(2), task).await;
    }
}

/// Collects request bodies and answers with a scripted status sequence
/// (the last status repeats).
#[derive(Clone)]
pub struct Recorder {
    pub bodies: Arc<Mutex<Vec<(String, Value)>>>,
    statuses: Arc<Mutex<Vec<StatusCode>>>,
}

impl Recorder {
    pub fn new(statuses: Vec<StatusCode>) -> Self {
        Self {
            bodies: Arc::new(Mutex::new(Vec::new())),
            statuses: Arc::new(Mutex::new(statuses)),
        }
    }

    pub fn received(&self) -> Vec<(String, Value)> {
        self.bodies.lock().unwrap().clone()
    }

    fn next_status(&self) -> StatusCode {
        let mut s = self.statuses.lock().unwrap();
        if s.len() > 1 {
            s.remove(0)
        } else {
            s.first().copied().unwrap_or(StatusCode::OK)
        }
    }

    /// Serves `POST /{name}` for each name on an ephemeral port.
    pub async fn serve(&self, paths: &[&str]) -> SocketAddr {
        let mut app = Router::new();
        for p in paths {
            let rec = self.clone();
            let name = p.to_string();
            app = app.route(
                &format!("/{p}"),
                post(move |body: Bytes| {
                    let rec = rec.clone();
                    let name = name.clone();
                    async move {
                        let v: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
                        rec.bodies.lock().unwrap().push((name, v));
                        (rec.next_status(), "{}")
                    }
                }),
            );
        }
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        addr
    }
}

/// Reads server-sent events from a streaming response.
pub struct SseReader {
    resp: reqwest::Response,
    buf: String,
}

impl SseReader {
    pub async fn open(url: &str) -> SseReader {
        let resp = reqwest::get(url).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        SseReader {
            resp,
            buf: String::new(),
        }
    }

    /// Next `(event, data)` pair, or `None` if nothing arrives within `wait`.
    pub async fn next(&mut self, wait: Duration) -> Option<(String, Value)> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let frame: String = self.buf.drain(..end + 2).collect();
                let mut name = String::from("message");
                let mut data = String::new();
                for line in frame.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        name = v.trim().to_owned();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if data.is_empty() {
                    // keep-alive comment
                    continue;
                }
                return Some((name, serde_json::from_str(&data).unwrap_or(Value::String(data))));
            }
            match tokio::time::timeout(wait, self.resp.chunk()).await {
                Ok(Ok(Some(bytes))) => self.buf.push_str(&String::from_utf8_lossy(&bytes)),
                _ => return None,
            }
        }
    }
}
