use std::collections::BTreeMap;
use std::path::PathBuf;

use escalation_service::config::{ConfigError, ConfigLayer, EngineConfig, ProviderLayer, ProviderSelector};

fn env(vars: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
    let map: BTreeMap<String, String> = vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    move |k| map.get(k).cloned()
}

fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("escalate.toml");
    std::fs::write(&path, text).unwrap();
    (dir, path)
}

#[test]
fn defaults() {
    let c = EngineConfig::default();
    assert_eq!(c.threshold, 0.88);
    assert_eq!(c.embedding_dim, 1024);
    assert_eq!(c.chat, ProviderSelector::Mock);
    assert_eq!(c.embedding, ProviderSelector::Mock);
    assert!(c.categories.iter().any(|c| c.name == "Others"));
    assert_eq!(c.pipeline_settings().threshold, 0.88);
    assert!(c.rewrite);
}

#[test]
fn flags_beat_env_beat_file() {
    let (_d, path) = write(
        r#"
threshold = 0.9
max_messages = 7
data_dir = "/from/file"
listen = "127.0.0.1:9000"

[chat]
endpoint = "http://file/chat"
model = "file-model"
"#,
    );
    let flags = ConfigLayer {
        threshold: Some(0.8),
        ..ConfigLayer::default()
    };
    let c = EngineConfig::load(
        Some(&path),
        env(&[
            ("ESCALATE_THRESHOLD", "0.85"),
            ("ESCALATE_DATA_DIR", "/from/env"),
            ("ESCALATE_CHAT_MODEL", "env-model"),
        ]),
        flags,
    )
    .unwrap();
    assert_eq!(c.threshold, 0.8);
    assert_eq!(c.data_dir, PathBuf::from("/from/env"));
    assert_eq!(c.max_messages, 7);
    assert_eq!(c.listen.port(), 9000);
    match &c.chat {
        ProviderSelector::Http { endpoint, model, .. } => {
            assert_eq!(endpoint, "http://file/chat");
            assert_eq!(model, "env-model");
        }
        other => panic!("{other:?}"),
    }
    // env alone beats the file
    let c = EngineConfig::load(
        Some(&path),
        env(&[("ESCALATE_THRESHOLD", "0.85")]),
        ConfigLayer::default(),
    )
    .unwrap();
    assert_eq!(c.threshold, 0.85);
}

#[test]
fn threshold_must_lie_in_half_open_unit_interval() {
    for bad in [0.0, -0.1, 1.0001, f64::NAN, f64::INFINITY] {
        let r = EngineConfig::resolve(ConfigLayer {
            threshold: Some(bad),
            ..ConfigLayer::default()
        });
        assert!(matches!(r, Err(ConfigError::Threshold(_))), "{bad}");
    }
    for good in [1e-9, 0.5, 1.0] {
        let c = EngineConfig::resolve(ConfigLayer {
            threshold: Some(good),
            ..ConfigLayer::default()
        })
        .unwrap();
        assert_eq!(c.threshold, good);
    }
}

#[test]
fn invalid_settings_are_rejected_at_startup() {
    let cases: Vec<ConfigLayer> = vec![
        ConfigLayer {
            embedding_dim: Some(0),
            ..ConfigLayer::default()
        },
        ConfigLayer {
            max_messages: Some(0),
            ..ConfigLayer::default()
        },
        ConfigLayer {
            webhook_url: Some("not a url".into()),
            ..ConfigLayer::default()
        },
        ConfigLayer {
            routes: Some(BTreeMap::from([("Weather".to_owned(), "http://x/hook".to_owned())])),
            ..ConfigLayer::default()
        },
        ConfigLayer {
            chat: ProviderLayer {
                endpoint: Some("http://x/chat".into()),
                ..ProviderLayer::default()
            },
            ..ConfigLayer::default()
        },
        ConfigLayer {
            listen: Some("localhost".into()),
            ..ConfigLayer::default()
        },
        ConfigLayer {
            snapshot_every: Some(0),
            ..ConfigLayer::default()
        },
    ];
    for layer in cases {
        assert!(EngineConfig::resolve(layer.clone()).is_err(), "{layer:?}");
    }
}

#[test]
fn mock_selector_and_http_provider() {
    let c = EngineConfig::resolve(ConfigLayer {
        chat: ProviderLayer {
            endpoint: Some("MOCK".into()),
            ..ProviderLayer::default()
        },
        embedding: ProviderLayer {
            endpoint: Some("https://emb.example/v1/embeddings".into()),
            model: Some("e5".into()),
            token: Some("t".into()),
            timeout_secs: Some(3),
        },
        embedding_dim: Some(384),
        ..ConfigLayer::default()
    })
    .unwrap();
    assert_eq!(c.chat, ProviderSelector::Mock);
    assert!(matches!(&c.embedding, ProviderSelector::Http { model, timeout_secs: 3, .. } if model == "e5"));
    // tokens never leak into serialized config
    assert!(!serde_json::to_string(&c).unwrap().contains("\"t\""));
}

#[test]
fn toml_file_with_categories_and_routes() {
    let (_d, path) = write(
        r#"
webhook_url = "http://hooks/default"

[[categories]]
name = "Outage"
description = "A service is down."

[[categories]]
name = "Fraud"
description = "Suspicious payments."

[routes]
Fraud = "http://hooks/fraud"
"#,
    );
    let c = EngineConfig::load(Some(&path), env(&[]), ConfigLayer::default()).unwrap();
    let names: Vec<&str> = c.categories.iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["Outage", "Fraud", "Others"]);
    assert_eq!(c.routes["Fraud"], "http://hooks/fraud");
    let spec = c.prompt_spec();
    assert_eq!(spec.canonical_category("fraud"), Some("Fraud"));
}

#[test]
fn unknown_keys_and_bad_env_values_fail() {
    let (_d, path) = write("thresold = 0.9\n");
    assert!(matches!(
        EngineConfig::load(Some(&path), env(&[]), ConfigLayer::default()),
        Err(ConfigError::Parse { .. })
    ));
    assert!(matches!(
        EngineConfig::load(None, env(&[("ESCALATE_THRESHOLD", "high")]), ConfigLayer::default()),
        Err(ConfigError::Env { .. })
    ));
    assert!(matches!(
        EngineConfig::load(
            Some(&PathBuf::from("/no/such/file.toml")),
            env(&[]),
            ConfigLayer::default()
        ),
        Err(ConfigError::Read { .. })
    ));
}
