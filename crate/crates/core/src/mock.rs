//! Deterministic rule-based chat provider.
//!
//! Routes on the task header of the system prompt. Classification uses a
//! keyword table, issue summaries echo the customer's content words, rewrites
//! keep the tokens shared by a strict majority of the group's issues, and
//! reasoning revisions are templated from the requested category.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embedding::tokenize;
use crate::prompts::{self, last_section, sections};
use crate::provider::{ChatMessage, ChatProvider, ProviderError, Role};
use crate::ticket::OTHERS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordRule {
    pub category: String,
    /// Each keyword is one or more words; a word matches any token it prefixes.
    pub keywords: Vec<String>,
}

impl KeywordRule {
    pub fn new(category: &str, keywords: &[&str]) -> Self {
        Self {
            category: category.to_owned(),
            keywords: keywords.iter().map(|k| (*k).to_owned()).collect(),
        }
    }
}

pub fn default_rules() -> Vec<KeywordRule> {
    vec![
        KeywordRule::new(
            "Security Incident",
            &[
                "breach",
                "unauthorized",
                "attack",
                "leak",
                "hacked",
                "malware",
                "ddos",
                "intrusion",
            ],
        ),
        KeywordRule::new(
            "Asset Loss",
            &["data loss", "lost", "deleted", "missing", "wiped", "corrupt"],
        ),
        KeywordRule::new(
            "Customer Complaint",
            &[
                "refund dispute",
                "complaint",
                "unacceptable",
                "compensation",
                "furious",
                "disappointed",
            ],
        ),
        KeywordRule::new(
            "System Failure",
            &[
                "outage",
                "fail",
                "crash",
                "error",
                "timeout",
                "unavailable",
                "unreachable",
                "degraded",
            ],
        ),
    ]
}

pub const DEFAULT_PRODUCTS: &[&str] = &[
    "GPU instances",
    "virtual machines",
    "object storage",
    "block storage",
    "load balancer",
    "kubernetes cluster",
    "container registry",
    "message queue",
    "API gateway",
    "database",
    "CDN",
    "DNS",
];

pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "before",
    "but", "by", "can", "could", "did", "do", "does", "for", "from", "had", "has", "have", "hello", "help", "hi",
    "how", "i", "if", "in", "is", "it", "just", "me", "my", "now", "of", "on", "or", "our", "please", "since", "so",
    "some", "still", "thank", "thanks", "that", "the", "there", "this", "to", "too", "us", "very", "was", "we", "were",
    "what", "when", "which", "will", "with", "would", "you", "your",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockProvider {
    rules: Vec<KeywordRule>,
    products: Vec<String>,
    stopwords: HashSet<String>,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new(default_rules())
    }
}

impl MockProvider {
    pub fn new(rules: Vec<KeywordRule>) -> Self {
        Self {
            rules,
            products: DEFAULT_PRODUCTS.iter().map(|p| (*p).to_owned()).collect(),
            stopwords: STOPWORDS.iter().map(|w| (*w).to_owned()).collect(),
        }
    }

    /// First rule (in table order) with a keyword occurring in `text`, and that keyword.
    pub fn match_rule(&self, text: &str) -> Option<(&str, &str)> {
        let tokens: Vec<String> = tokenize(text).collect();
        self.rules.iter().find_map(|rule| {
            rule.keywords
                .iter()
                .find(|kw| keyword_matches(&tokens, kw))
                .map(|kw| (rule.category.as_str(), kw.as_str()))
        })
    }

    /// Unique non-stopword tokens of `text`, in order of first appearance.
    pub fn content_words(&self, text: &str) -> Vec<String> {
        let mut seen = HashSet::new();
        tokenize(text)
            .filter(|t| !self.stopwords.contains(t))
            .filter(|t| seen.insert(t.clone()))
            .collect()
    }

    fn product_in(&self, text: &str) -> Option<&str> {
        let lower = text.to_lowercase();
        self.products
            .iter()
            .filter_map(|p| lower.find(&p.to_lowercase()).map(|pos| (pos, p.as_str())))
            .min_by_key(|(pos, _)| *pos)
            .map(|(_, p)| p)
    }

    fn classify(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let block = last_user_section(messages, "ticket")
            .ok_or_else(|| ProviderError::BadResponse("classification prompt without <ticket>".into()))?;
        let text = ticket_lines(block, &["title: ", "customer: "]);
        let (category, thought) = match self.match_rule(&text) {
            Some((category, kw)) => (
                category.to_owned(),
                format!("The customer reports \"{kw}\", which points to {category}; this needs escalation."),
            ),
            None => (
                OTHERS.to_owned(),
                "The conversation contains no sign of a failure, complaint, asset loss or security threat; no escalation is needed.".to_owned(),
            ),
        };
        Ok(json!({ "thought": thought, "category": category }).to_string())
    }

    fn summarize(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let block = last_user_section(messages, "ticket")
            .ok_or_else(|| ProviderError::BadResponse("summary prompt without <ticket>".into()))?;
        let text = ticket_lines(block, &["customer: "]);
        let words = self.content_words(&text);
        if words.is_empty() {
            return Ok(String::new());
        }
        Ok(json!({ "issue": words.join(" "), "product": self.product_in(&text) }).to_string())
    }

    fn rewrite(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let user = last_user(messages).unwrap_or_default();
        let issues = sections(user, "issue");
        if issues.is_empty() {
            return Err(ProviderError::BadResponse("rewrite prompt without <issue>".into()));
        }
        let per_issue: Vec<Vec<String>> = issues.iter().map(|i| self.content_words(i)).collect();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for words in &per_issue {
            for w in words {
                *counts.entry(w.as_str()).or_default() += 1;
            }
        }
        let n = per_issue.len();
        let mut seen = HashSet::new();
        let common: Vec<&str> = per_issue
            .iter()
            .flatten()
            .map(String::as_str)
            .filter(|w| counts[w] * 2 > n && seen.insert(*w))
            .collect();
        let text = if common.is_empty() {
            issues[0].trim().to_owned()
        } else {
            common.join(" ")
        };
        Ok(json!({ "issue": text }).to_string())
    }

    fn revise(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let user = last_user(messages).unwrap_or_default();
        let block = last_section(user, "ticket")
            .ok_or_else(|| ProviderError::BadResponse("revision prompt without <ticket>".into()))?;
        let category = last_section(user, "category")
            .ok_or_else(|| ProviderError::BadResponse("revision prompt without <category>".into()))?
            .trim();
        let variant = last_section(user, "variant").unwrap_or("1").trim();
        let words = self.content_words(&ticket_lines(block, &["customer: "]));
        let gist: Vec<&str> = words.iter().take(8).map(String::as_str).collect();
        let thought = format!(
            "Reasoning path {variant}: the customer describes \"{}\". Weighing the severity and the responder it needs, this ticket belongs to {category}.",
            gist.join(" ")
        );
        Ok(json!({ "thought": thought, "category": category }).to_string())
    }
}

fn keyword_matches(tokens: &[String], keyword: &str) -> bool {
    let kw: Vec<String> = tokenize(keyword).collect();
    if kw.is_empty() || kw.len() > tokens.len() {
        return false;
    }
    tokens
        .windows(kw.len())
        .any(|w| w.iter().zip(&kw).all(|(t, k)| t.starts_with(k.as_str())))
}

fn last_user(messages: &[ChatMessage]) -> Option<&str> {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.content.as_str())
}

fn last_user_section<'a>(messages: &'a [ChatMessage], tag: &str) -> Option<&'a str> {
    messages
        .iter()
        .rev()
        .filter(|m| m.role == Role::User)
        .find_map(|m| last_section(&m.content, tag))
}

fn ticket_lines(block: &str, prefixes: &[&str]) -> String {
    block
        .lines()
        .filter_map(|l| prefixes.iter().find_map(|p| l.strip_prefix(p)))
        .collect::<Vec<_>>()
        .join("\n")
}

impl ChatProvider for MockProvider {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, ProviderError> {
        let system = messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let header = system.lines().next().unwrap_or_default();
        match header {
            prompts::TASK_CLASSIFY => self.classify(messages),
            prompts::TASK_SUMMARIZE => self.summarize(messages),
            prompts::TASK_REWRITE => self.rewrite(messages),
            prompts::TASK_REVISE => self.revise(messages),
            other => Err(ProviderError::BadResponse(format!(
                "unrecognized task header {other:?}"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_prefix_and_phrase_matching() {
        let m = MockProvider::default();
        assert_eq!(
            m.match_rule("Instances FAILED to boot").map(|r| r.0),
            Some("System Failure")
        );
        assert_eq!(
            m.match_rule("open a refund dispute").map(|r| r.0),
            Some("Customer Complaint")
        );
        assert_eq!(m.match_rule("refund please"), None);
        assert_eq!(m.match_rule("download the documentation"), None);
        // table order decides between categories
        assert_eq!(
            m.match_rule("data lost after a breach").map(|r| r.0),
            Some("Security Incident")
        );
    }

    #[test]
    fn content_words_unique_in_order() {
        let m = MockProvider::default();
        assert_eq!(
            m.content_words("Our GPU instances fail to start since 10am, GPU!"),
            vec!["gpu", "instances", "fail", "start", "10am"]
        );
    }

    #[test]
    fn unknown_task_is_an_error() {
        let m = MockProvider::default();
        assert!(m
            .complete(&[ChatMessage::system("## Task: other"), ChatMessage::user("x")], 0.0)
            .is_err());
    }

    #[test]
    fn rewrite_keeps_strict_majority() {
        let m = MockProvider::default();
        let user = r#"<issue role="escalated">disk full error</issue>
<issue role="linked">disk full warning</issue>
<issue role="linked">disk quota error</issue>"#;
        let out = m
            .complete(
                &[ChatMessage::system(prompts::TASK_REWRITE), ChatMessage::user(user)],
                0.0,
            )
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["issue"], "disk full error");
    }
}
