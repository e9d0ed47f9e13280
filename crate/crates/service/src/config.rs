//! Layered service configuration.
//!
//! A TOML file, `ESCALATE_*` environment variables and command-line flags
//! each produce a [`ConfigLayer`]; later layers win field by field
//! (flags > environment > file) and the merge is resolved into a validated
//! [`EngineConfig`].

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use escalation_core::classifier::{default_categories, PromptSpec, TicketCategory};
use escalation_core::dedup::DEFAULT_THRESHOLD;
use escalation_core::embedding::HashedBagOfWords;
use escalation_core::engine::PipelineSettings;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "ESCALATE_";
const MOCK: &str = "mock";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{var}: cannot parse {value:?}")]
    Env { var: String, value: String },
    #[error("threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{field}: invalid URL {url:?}")]
    Url { field: String, url: String },
    #[error("{0} provider needs a model name")]
    MissingModel(&'static str),
    #[error("alert route for unknown category {0:?}")]
    UnknownRoute(String),
    #[error("invalid listen address {0:?}")]
    Listen(String),
    #[error("categories: {0}")]
    Categories(String),
}

/// Endpoint settings for one provider; an absent or `"mock"` endpoint selects
/// the deterministic mock.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderLayer {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub token: Option<String>,
    pub timeout_secs: Option<u64>,
}

impl ProviderLayer {
    fn overlay(self, top: ProviderLayer) -> ProviderLayer {
        ProviderLayer {
            endpoint: top.endpoint.or(self.endpoint),
            model: top.model.or(self.model),
            token: top.token.or(self.token),
            timeout_secs: top.timeout_secs.or(self.timeout_secs),
        }
    }
}

/// One configuration source. Every field is optional so layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub categories: Option<Vec<TicketCategory>>,
    pub threshold: Option<f64>,
    pub embedding_dim: Option<usize>,
    #[serde(default)]
    pub chat: ProviderLayer,
    #[serde(default)]
    pub embedding: ProviderLayer,
    pub max_messages: Option<usize>,
    pub webhook_url: Option<String>,
    /// Category name to webhook URL; categories without a route use `webhook_url`.
    pub routes: Option<BTreeMap<String, String>>,
    pub data_dir: Option<PathBuf>,
    pub listen: Option<String>,
    pub link_base_url: Option<String>,
    pub rewrite: Option<bool>,
    pub snapshot_every: Option<u64>,
}

impl ConfigLayer {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    /// Reads `ESCALATE_*` variables through `lookup`, e.g. `std::env::var`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |name: &str| lookup(&format!("{ENV_PREFIX}{name}")).filter(|v| !v.is_empty());
        fn parsed<T: FromStr>(name: &str, value: Option<String>) -> Result<Option<T>, ConfigError> {
            value
                .map(|v| {
                    v.trim().parse().map_err(|_| ConfigError::Env {
                        var: format!("{ENV_PREFIX}{name}"),
                        value: v,
                    })
                })
                .transpose()
        }
        Ok(Self {
            categories: None,
            threshold: parsed("THRESHOLD", get("THRESHOLD"))?,
            embedding_dim: parsed("EMBEDDING_DIM", get("EMBEDDING_DIM"))?,
            chat: ProviderLayer {
                endpoint: get("CHAT_ENDPOINT"),
                model: get("CHAT_MODEL"),
                token: get("CHAT_TOKEN"),
                timeout_secs: parsed("CHAT_TIMEOUT_SECS", get("CHAT_TIMEOUT_SECS"))?,
            },
            embedding: ProviderLayer {
                endpoint: get("EMBEDDING_ENDPOINT"),
                model: get("EMBEDDING_MODEL"),
                token: get("EMBEDDING_TOKEN"),
                timeout_secs: parsed("EMBEDDING_TIMEOUT_SECS", get("EMBEDDING_TIMEOUT_SECS"))?,
            },
            max_messages: parsed("MAX_MESSAGES", get("MAX_MESSAGES"))?,
            webhook_url: get("WEBHOOK_URL"),
            routes: None,
            data_dir: get("DATA_DIR").map(PathBuf::from),
            listen: get("LISTEN"),
            link_base_url: get("LINK_BASE_URL"),
            rewrite: parsed("REWRITE", get("REWRITE"))?,
            snapshot_every: parsed("SNAPSHOT_EVERY", get("SNAPSHOT_EVERY"))?,
        })
    }

    /// Fields set in `top` replace those of `self`.
    pub fn overlay(self, top: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            categories: top.categories.or(self.categories),
            threshold: top.threshold.or(self.threshold),
            embedding_dim: top.embedding_dim.or(self.embedding_dim),
            chat: self.chat.overlay(top.chat),
            embedding: self.embedding.overlay(top.embedding),
            max_messages: top.max_messages.or(self.max_messages),
            webhook_url: top.webhook_url.or(self.webhook_url),
            routes: top.routes.or(self.routes),
            data_dir: top.data_dir.or(self.data_dir),
            listen: top.listen.or(self.listen),
            link_base_url: top.link_base_url.or(self.link_base_url),
            rewrite: top.rewrite.or(self.rewrite),
            snapshot_every: top.snapshot_every.or(self.snapshot_every),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSelector {
    Mock,
    Http {
        endpoint: String,
        model: String,
        #[serde(skip)]
        token: Option<String>,
        timeout_secs: u64,
    },
}

impl ProviderSelector {
    pub const DEFAULT_TIMEOUT_SECS: u64 = 60;

    pub fn timeout(&self) -> Option<Duration> {
        match self {
            ProviderSelector::Mock => None,
            ProviderSelector::Http { timeout_secs, .. } => Some(Duration::from_secs(*timeout_secs)),
        }
    }
}

/// Validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineConfig {
    pub categories: Vec<TicketCategory>,
    pub threshold: f64,
    pub embedding_dim: usize,
    pub chat: ProviderSelector,
    pub embedding: ProviderSelector,
    pub max_messages: usize,
    pub webhook_url: Option<String>,
    pub routes: BTreeMap<String, String>,
    pub data_dir: PathBuf,
    pub listen: SocketAddr,
    pub link_base_url: String,
    pub rewrite: bool,
    pub snapshot_every: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::resolve(ConfigLayer::default()).expect("defaults are valid")
    }
}

impl EngineConfig {
    pub const DEFAULT_MAX_MESSAGES: usize = 20;
    pub const DEFAULT_LISTEN: &'static str = "127.0.0.1:8080";
    pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

    /// Merges file, environment and flag layers (in that order of increasing precedence).
    pub fn load(
        file: Option<&Path>,
        env: impl Fn(&str) -> Option<String>,
        flags: ConfigLayer,
    ) -> Result<Self, ConfigError> {
        let base = match file {
            Some(p) => ConfigLayer::from_file(p)?,
            None => ConfigLayer::default(),
        };
        Self::resolve(base.overlay(ConfigLayer::from_env(env)?).overlay(flags))
    }

    pub fn resolve(layer: ConfigLayer) -> Result<Self, ConfigError> {
        let threshold = layer.threshold.unwrap_or(DEFAULT_THRESHOLD);
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ConfigError::Threshold(threshold));
        }
        let embedding_dim = layer.embedding_dim.unwrap_or(HashedBagOfWords::DEFAULT_DIM);
        if embedding_dim == 0 {
            return Err(ConfigError::NotPositive("embedding_dim"));
        }
        let max_messages = layer.max_messages.unwrap_or(Self::DEFAULT_MAX_MESSAGES);
        if max_messages == 0 {
            return Err(ConfigError::NotPositive("max_messages"));
        }
        if layer.snapshot_every == Some(0) {
            return Err(ConfigError::NotPositive("snapshot_every"));
        }
        let categories = layer.categories.unwrap_or_else(default_categories);
        let spec = PromptSpec::new(categories.clone()).map_err(|e| ConfigError::Categories(e.to_string()))?;

        let routes = layer.routes.unwrap_or_default();
        for (category, url) in &routes {
            if spec.canonical_category(category).is_none() {
                return Err(ConfigError::UnknownRoute(category.clone()));
            }
            check_url(&format!("routes.{category}"), url)?;
        }
        if let Some(url) = &layer.webhook_url {
            check_url("webhook_url", url)?;
        }
        let link_base_url = layer
            .link_base_url
            .unwrap_or_else(|| PipelineSettings::default().link_base_url);
        check_url("link_base_url", &link_base_url)?;
        let listen_text = layer.listen.unwrap_or_else(|| Self::DEFAULT_LISTEN.to_owned());
        let listen = listen_text
            .parse()
            .map_err(|_| ConfigError::Listen(listen_text.clone()))?;

        Ok(Self {
            categories: spec.categories().to_vec(),
            threshold,
            embedding_dim,
            chat: selector("chat", layer.chat)?,
            embedding: selector("embedding", layer.embedding)?,
            max_messages,
            webhook_url: layer.webhook_url,
            routes,
            data_dir: layer.data_dir.unwrap_or_else(|| PathBuf::from("data")),
            listen,
            link_base_url,
            rewrite: layer.rewrite.unwrap_or(true),
            snapshot_every: Some(layer.snapshot_every.unwrap_or(Self::DEFAULT_SNAPSHOT_EVERY)),
        })
    }

    pub fn prompt_spec(&self) -> PromptSpec {
        PromptSpec::new(self.categories.clone())
            .and_then(|s| s.with_max_messages(self.max_messages))
            .expect("validated at load")
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            prompt: self.prompt_spec(),
            threshold: self.threshold,
            rewrite: self.rewrite,
            icl_k: 0,
            link_base_url: self.link_base_url.clone(),
        }
    }
}

fn check_url(field: &str, url: &str) -> Result<(), ConfigError> {
    match reqwest::Url::parse(url) {
        Ok(u) if matches!(u.scheme(), "http" | "https") => Ok(()),
        _ => Err(ConfigError::Url {
            field: field.to_owned(),
            url: url.to_owned(),
        }),
    }
}

fn selector(name: &'static str, layer: ProviderLayer) -> Result<ProviderSelector, ConfigError> {
    let endpoint = match layer.endpoint {
        None => return Ok(ProviderSelector::Mock),
        Some(e) if e.eq_ignore_ascii_case(MOCK) => return Ok(ProviderSelector::Mock),
        Some(e) => e,
    };
    check_url(&format!("{name}.endpoint"), &endpoint)?;
    let model = layer.model.ok_or(ConfigError::MissingModel(name))?;
    let timeout_secs = layer.timeout_secs.unwrap_or(ProviderSelector::DEFAULT_TIMEOUT_SECS);
    if timeout_secs == 0 {
        return Err(ConfigError::NotPositive("timeout_secs"));
    }
    Ok(ProviderSelector::Http {
        endpoint,
        model,
        token: layer.token,
        timeout_secs,
    })
}
