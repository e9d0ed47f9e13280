//! Webhook delivery of alert notifications, routed by category.

use std::collections::BTreeMap;
use std::time::Duration;

use escalation_core::engine::AlertNotification;
use thiserror::Error;

use crate::config::EngineConfig;

#[derive(Debug, Error)]
pub enum WebhookError {
    #[error("webhook {url} failed after {attempts} attempts: {last}")]
    Exhausted { url: String, attempts: u32, last: String },
}

/// Posts alerts as JSON. A failed delivery is retried `retries` times with
/// doubling backoff, then logged and dropped.
#[derive(Debug, Clone)]
pub struct WebhookDispatcher {
    client: reqwest::Client,
    default_url: Option<String>,
    routes: BTreeMap<String, String>,
    retries: u32,
    backoff: Duration,
}

impl WebhookDispatcher {
    pub const RETRIES: u32 = 3;
    pub const BACKOFF: Duration = Duration::from_millis(500);
    const TIMEOUT: Duration = Duration::from_secs(10);

    pub fn new(default_url: Option<String>, routes: BTreeMap<String, String>) -> Self {
        Self {
            client: reqwest::Client::builder()
                .timeout(Self::TIMEOUT)
                .build()
                .expect("TLS backend initializes"),
            default_url,
            routes,
            retries: Self::RETRIES,
            backoff: Self::BACKOFF,
        }
    }

    pub fn from_config(cfg: &EngineConfig) -> Option<Self> {
        (cfg.webhook_url.is_some() || !cfg.routes.is_empty())
            .then(|| Self::new(cfg.webhook_url.clone(), cfg.routes.clone()))
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn url_for(&self, category: &str) -> Option<&str> {
        self.routes
            .iter()
            .find(|(c, _)| c.eq_ignore_ascii_case(category))
            .map(|(_, u)| u.as_str())
            .or(self.default_url.as_deref())
    }

    /// Delivers one alert, returning the number of attempts it took.
    /// `Ok(0)` means no webhook is configured for its category.
    pub async fn deliver(&self, alert: &AlertNotification) -> Result<u32, WebhookError> {
        let Some(url) = self.url_for(&alert.category) else {
            return Ok(0);
        };
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                tokio::time::sleep(self.backoff * 2u32.pow(attempt - 1)).await;
            }
            match self.client.post(url).json(alert).send().await {
                Ok(r) if r.status().is_success() => return Ok(attempt + 1),
                Ok(r) => last = format!("status {}", r.status()),
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(%url, attempt, error = %last, "webhook attempt failed");
        }
        Err(WebhookError::Exhausted {
            url: url.to_owned(),
            attempts: self.retries + 1,
            last,
        })
    }

    /// Fire-and-forget delivery on the current runtime.
    pub fn spawn(&self, alert: AlertNotification) {
        let this = self.clone();
        tokio::spawn(async move {
            if let Err(e) = this.deliver(&alert).await {
                tracing::error!(ticket = %alert.ticket_id, error = %e, "alert not delivered");
            }
        });
    }
}
