//! Chat-completion provider interface and test doubles.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned an unexpected response: {0}")]
    BadResponse(String),
    #[error("script exhausted")]
    Exhausted,
}

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError> {
        (**self).complete(messages, temperature)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, ProviderError> {
        (**self).complete(messages, temperature)
    }
}

/// Replays a fixed sequence of replies and records every request.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    replies: Mutex<VecDeque<Result<String, ProviderError>>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedProvider {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_results(replies.into_iter().map(|s| Ok(s.into())))
    }

    pub fn from_results(replies: impl IntoIterator<Item = Result<String, ProviderError>>) -> Self {
        Self {
            replies: Mutex::new(replies.into_iter().collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, ProviderError> {
        self.calls.lock().unwrap().push(messages.to_vec());
        self.replies
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or(Err(ProviderError::Exhausted))
    }
}

/// Always fails; models an unreachable backend.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnavailableProvider;

impl ChatProvider for UnavailableProvider {
    fn complete(&self, _: &[ChatMessage], _: f64) -> Result<String, ProviderError> {
        Err(ProviderError::Transport("provider unavailable".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_replays_in_order_then_exhausts() {
        let p = ScriptedProvider::new(["a", "b"]);
        let msgs = [ChatMessage::user("x")];
        assert_eq!(p.complete(&msgs, 0.0).unwrap(), "a");
        assert_eq!(p.complete(&msgs, 0.0).unwrap(), "b");
        assert_eq!(p.complete(&msgs, 0.0), Err(ProviderError::Exhausted));
        assert_eq!(p.call_count(), 3);
    }

    #[test]
    fn role_wire_names() {
        let m = ChatMessage::system("s");
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"role":"system","content":"s"}"#);
    }
}
