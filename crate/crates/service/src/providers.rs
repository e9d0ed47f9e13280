//! HTTP chat-completion and embedding clients, plus construction of the
//! engine from a resolved config.
//!
//! Both clients are blocking; the engine runs its rounds on blocking threads.

use std::sync::Arc;
use std::time::Duration;

use escalation_core::embedding::{Embedder, Embedding, EmbeddingError, HashedBagOfWords};
use escalation_core::engine::Engine;
use escalation_core::mock::MockProvider;
use escalation_core::provider::{ChatMessage, ChatProvider, ProviderError};
use escalation_core::DefaultEngine;
use reqwest::blocking::{Client, RequestBuilder};
use serde::{Deserialize, Serialize};

use crate::config::{EngineConfig, ProviderSelector};

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    content: Option<String>,
}

#[derive(Debug, Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
    #[serde(default)]
    index: Option<usize>,
}

fn client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("TLS backend initializes")
}

fn authorize(req: RequestBuilder, token: Option<&str>) -> RequestBuilder {
    match token {
        Some(t) => req.bearer_auth(t),
        None => req,
    }
}

fn send<T: for<'de> Deserialize<'de>>(req: RequestBuilder) -> Result<T, ProviderError> {
    let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        let body = resp.text().unwrap_or_default();
        return Err(ProviderError::BadResponse(format!(
            "{status}: {}",
            body.chars().take(200).collect::<String>()
        )));
    }
    resp.json().map_err(|e| ProviderError::BadResponse(e.to_string()))
}

/// Chat-completion client posting `{model, messages, temperature}` and
/// reading the first choice's message content.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    client: Client,
    endpoint: String,
    model: String,
    token: Option<String>,
}

impl HttpChatProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
        timeout: Duration,
    ) -> Self {
        Self {
            client: client(timeout),
            endpoint: endpoint.into(),
            model: model.into(),
            token,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError> {
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature,
        };
        let req = authorize(self.client.post(&self.endpoint).json(&body), self.token.as_deref());
        let resp: ChatResponse = send(req)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("no choices in completion".into()))
    }
}

/// Embedding client posting `{model, input: [text]}` and reading one vector per input.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: Client,
    endpoint: String,
    model: String,
    token: Option<String>,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        token: Option<String>,
        dim: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            client: client(timeout),
            endpoint: endpoint.into(),
            model: model.into(),
            token,
            dim,
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let req = authorize(self.client.post(&self.endpoint).json(&body), self.token.as_deref());
        let mut resp: EmbeddingResponse = send(req)?;
        if resp.data.len() != texts.len() {
            return Err(ProviderError::BadResponse(format!(
                "{} vectors for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        if resp.data.iter().all(|d| d.index.is_some()) {
            resp.data.sort_by_key(|d| d.index);
        }
        Ok(resp.data.into_iter().map(|d| d.embedding).collect())
    }
}

impl Embedder<f64> for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding<f64>, EmbeddingError> {
        self.embed_batch(&[text]).map(|mut v| v.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding<f64>>, EmbeddingError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbeddingError::EmptyText);
        }
        let vectors = self.request(texts)?;
        vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbeddingError::DimensionMismatch {
                        left: v.len(),
                        right: self.dim,
                    });
                }
                Embedding::new(v)
            })
            .collect()
    }
}

pub fn chat_provider(cfg: &EngineConfig) -> Arc<dyn ChatProvider> {
    match &cfg.chat {
        ProviderSelector::Mock => Arc::new(MockProvider::default()),
        ProviderSelector::Http {
            endpoint, model, token, ..
        } => Arc::new(HttpChatProvider::new(
            endpoint,
            model,
            token.clone(),
            cfg.chat.timeout().unwrap_or_default(),
        )),
    }
}

pub fn embedder(cfg: &EngineConfig) -> Arc<dyn Embedder<f64>> {
    match &cfg.embedding {
        ProviderSelector::Mock => Arc::new(HashedBagOfWords::new(cfg.embedding_dim)),
        ProviderSelector::Http {
            endpoint, model, token, ..
        } => Arc::new(HttpEmbedder::new(
            endpoint,
            model,
            token.clone(),
            cfg.embedding_dim,
            cfg.embedding.timeout().unwrap_or_default(),
        )),
    }
}

/// A fresh (empty) engine wired to the configured providers.
pub fn build_engine(cfg: &EngineConfig) -> DefaultEngine {
    Engine::new(cfg.pipeline_settings(), chat_provider(cfg), embedder(cfg)).expect("threshold validated at load")
}
