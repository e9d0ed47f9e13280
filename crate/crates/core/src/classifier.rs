//! Escalation classification: prompt construction, structured-output parsing
//! with a single repair round, and in-context example retrieval.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, Embedder, Embedding, EmbeddingError};
use crate::prompts::{self, json_object_span, render_transcript};
use crate::provider::{ChatMessage, ChatProvider};
use crate::scalar::Scalar;
use crate::ticket::{Ticket, OTHERS};

/// Field names of the structured classification record.
pub const OUTPUT_SCHEMA: &str =
    r#"{"thought": "<your step-by-step reasoning>", "category": "<exactly one category name>"}"#;

pub const DEFAULT_MAX_MESSAGES: usize = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TicketCategory {
    pub name: String,
    pub description: String,
    /// `(transcript excerpt, category)` pairs shown next to the category description.
    #[serde(default)]
    pub few_shot_examples: Vec<(String, String)>,
}

impl TicketCategory {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            few_shot_examples: Vec::new(),
        }
    }
}

pub fn default_categories() -> Vec<TicketCategory> {
    vec![
        TicketCategory::new(
            "System Failure",
            "A platform fault: outages, failing instances, errors or timeouts in a cloud product.",
        ),
        TicketCategory::new(
            "Customer Complaint",
            "An intense complaint about service quality, billing or support, including refund disputes.",
        ),
        TicketCategory::new(
            "Asset Loss",
            "Loss, deletion or corruption of customer data or other assets.",
        ),
        TicketCategory::new(
            "Security Incident",
            "Unauthorized access, attacks, leaked credentials or other security threats.",
        ),
        others_category(),
    ]
}

pub fn others_category() -> TicketCategory {
    TicketCategory::new(
        OTHERS,
        "Anything outside the categories above, such as documentation questions or routine how-to requests. These tickets are not escalated.",
    )
}

/// A labeled in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub transcript: String,
    pub thought: String,
    pub category: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PromptSpecError {
    #[error("duplicate category name {0:?}")]
    DuplicateCategory(String),
    #[error("in-context example uses unknown category {0:?}")]
    UnknownExampleCategory(String),
    #[error("category name must be non-empty")]
    EmptyCategoryName,
    #[error("max_messages must be at least 1")]
    ZeroMaxMessages,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    role_preamble: String,
    categories: Vec<TicketCategory>,
    cot_instruction: String,
    icl_examples: Vec<IclExample>,
    max_messages: usize,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self::new(default_categories()).expect("default categories are valid")
    }
}

impl PromptSpec {
    pub const DEFAULT_ROLE: &'static str = "You are a meticulous expert of our cloud platform's support organization. \
You read live support-ticket conversations and decide whether a ticket must be escalated, \
and to which responder category it belongs.";

    pub const DEFAULT_COT: &'static str =
        "Think step by step before answering: identify what the customer is asking for, \
which products are affected, and how severe the situation is. Write this reasoning in the \"thought\" field, \
then give the final category. If the ticket fits none of the predefined categories, answer \"Others\".";

    /// Builds a spec over `categories`; the reserved "Others" category is appended if absent.
    pub fn new(mut categories: Vec<TicketCategory>) -> Result<Self, PromptSpecError> {
        if !categories.iter().any(|c| c.name == OTHERS) {
            categories.push(others_category());
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if c.name.trim().is_empty() {
                return Err(PromptSpecError::EmptyCategoryName);
            }
            if !seen.insert(c.name.as_str()) {
                return Err(PromptSpecError::DuplicateCategory(c.name.clone()));
            }
        }
        Ok(Self {
            role_preamble: Self::DEFAULT_ROLE.to_owned(),
            categories,
            cot_instruction: Self::DEFAULT_COT.to_owned(),
            icl_examples: Vec::new(),
            max_messages: DEFAULT_MAX_MESSAGES,
        })
    }

    pub fn with_role_preamble(mut self, preamble: impl Into<String>) -> Self {
        self.role_preamble = preamble.into();
        self
    }

    pub fn with_cot_instruction(mut self, instruction: impl Into<String>) -> Self {
        self.cot_instruction = instruction.into();
        self
    }

    pub fn with_max_messages(mut self, max: usize) -> Result<Self, PromptSpecError> {
        if max == 0 {
            return Err(PromptSpecError::ZeroMaxMessages);
        }
        self.max_messages = max;
        Ok(self)
    }

    pub fn with_icl_examples(mut self, examples: Vec<IclExample>) -> Result<Self, PromptSpecError> {
        for ex in &examples {
            if self.canonical_category(&ex.category).is_none() {
                return Err(PromptSpecError::UnknownExampleCategory(ex.category.clone()));
            }
        }
        self.icl_examples = examples;
        Ok(self)
    }

    pub fn categories(&self) -> &[TicketCategory] {
        &self.categories
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    pub fn max_messages(&self) -> usize {
        self.max_messages
    }

    pub fn icl_examples(&self) -> &[IclExample] {
        &self.icl_examples
    }

    /// The configured spelling of `name`, matched case-insensitively.
    pub fn canonical_category(&self, name: &str) -> Option<&str> {
        let name = name.trim();
        self.category_names().find(|c| c.eq_ignore_ascii_case(name))
    }

    fn system_prompt(&self) -> String {
        let mut s = String::new();
        s.push_str(prompts::TASK_CLASSIFY);
        s.push('\n');
        s.push_str(&self.role_preamble);
        s.push_str("\n\nTicket categories:\n");
        for c in &self.categories {
            s.push_str(&format!("- {}: {}\n", c.name, c.description));
            for (excerpt, cat) in &c.few_shot_examples {
                s.push_str(&format!("  example ({cat}): \"{excerpt}\"\n"));
            }
        }
        s.push('\n');
        s.push_str(&self.cot_instruction);
        s.push_str("\n\nGenerate results in a structured format: respond with a single JSON object of the form ");
        s.push_str(OUTPUT_SCHEMA);
        s.push_str(" and nothing else.");
        s
    }
}

/// Builds the `[system, user]` classification prompt. Static examples from the
/// spec come first, then `retrieved` in retrieval order, then the target ticket.
pub fn build_prompt(spec: &PromptSpec, ticket: &Ticket, retrieved: &[IclExample]) -> Vec<ChatMessage> {
    build_prompt_for_len(spec, ticket, ticket.transcript.len(), retrieved)
}

/// Like [`build_prompt`] but only the first `transcript_len` messages are visible.
pub fn build_prompt_for_len(
    spec: &PromptSpec,
    ticket: &Ticket,
    transcript_len: usize,
    retrieved: &[IclExample],
) -> Vec<ChatMessage> {
    let mut user = String::new();
    let examples: Vec<&IclExample> = spec.icl_examples.iter().chain(retrieved).collect();
    if !examples.is_empty() {
        user.push_str("Here are labeled examples of previously classified tickets.\n\n");
        for (i, ex) in examples.iter().enumerate() {
            user.push_str(&format!(
                "<example index=\"{}\">\n<transcript>\n{}\n</transcript>\n<thought>{}</thought>\n<category>{}</category>\n</example>\n\n",
                i + 1,
                ex.transcript,
                ex.thought,
                ex.category
            ));
        }
    }
    let visible = &ticket.transcript[..transcript_len.min(ticket.transcript.len())];
    user.push_str("Classify the following ticket.\n<ticket>\ntitle: ");
    user.push_str(&ticket.title);
    user.push('\n');
    user.push_str(&render_transcript(visible, spec.max_messages));
    user.push_str("\n</ticket>");
    vec![ChatMessage::system(spec.system_prompt()), ChatMessage::user(user)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassificationOutcome {
    /// The first reply parsed.
    Parsed,
    /// The first reply was malformed; the repair reply parsed.
    Repaired,
    /// Both replies were unusable; the ticket defaults to "Others".
    FailSafe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub thought: String,
    pub category: String,
    /// Verbatim provider output of the last attempt.
    pub raw: String,
    pub outcome: ClassificationOutcome,
}

impl ClassificationResult {
    pub fn escalates(&self) -> bool {
        self.category != OTHERS
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MalformedOutput {
    #[error("no JSON object in output")]
    NoJson,
    #[error("invalid JSON: {0}")]
    InvalidJson(String),
    #[error("missing string field {0:?}")]
    MissingField(&'static str),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("provider error: {0}")]
    Provider(String),
}

/// Parses a `{thought, category}` record, canonicalizing the category name.
pub fn parse_classification(spec: &PromptSpec, raw: &str) -> Result<(String, String), MalformedOutput> {
    let span = json_object_span(raw).ok_or(MalformedOutput::NoJson)?;
    let value: serde_json::Value =
        serde_json::from_str(span).map_err(|e| MalformedOutput::InvalidJson(e.to_string()))?;
    let field = |name: &'static str| {
        value
            .get(name)
            .and_then(serde_json::Value::as_str)
            .ok_or(MalformedOutput::MissingField(name))
    };
    let thought = field("thought")?;
    let category = field("category")?;
    let canonical = spec
        .canonical_category(category)
        .ok_or_else(|| MalformedOutput::UnknownCategory(category.to_owned()))?;
    Ok((thought.to_owned(), canonical.to_owned()))
}

fn repair_request(spec: &PromptSpec, error: &MalformedOutput) -> ChatMessage {
    let names: Vec<&str> = spec.category_names().collect();
    ChatMessage::user(format!(
        "Your previous answer could not be used ({error}). Reply again with only the JSON object {OUTPUT_SCHEMA}, \
where category is exactly one of: {}.",
        names.join(", ")
    ))
}

pub fn classify(provider: &dyn ChatProvider, spec: &PromptSpec, ticket: &Ticket) -> ClassificationResult {
    classify_with_examples(provider, spec, ticket, &[])
}

/// Classifies `ticket` at temperature 0. A malformed first reply triggers one
/// repair request; if that also fails the result is "Others".
pub fn classify_with_examples(
    provider: &dyn ChatProvider,
    spec: &PromptSpec,
    ticket: &Ticket,
    retrieved: &[IclExample],
) -> ClassificationResult {
    let mut messages = build_prompt(spec, ticket, retrieved);
    let first = provider.complete(&messages, 0.0);
    let (raw, error) = match first {
        Ok(raw) => match parse_classification(spec, &raw) {
            Ok((thought, category)) => {
                return ClassificationResult {
                    thought,
                    category,
                    raw,
                    outcome: ClassificationOutcome::Parsed,
                }
            }
            Err(e) => (raw, e),
        },
        Err(e) => (String::new(), MalformedOutput::Provider(e.to_string())),
    };

    messages.push(ChatMessage::assistant(raw));
    messages.push(repair_request(spec, &error));
    let (raw, second_error) = match provider.complete(&messages, 0.0) {
        Ok(raw) => match parse_classification(spec, &raw) {
            Ok((thought, category)) => {
                return ClassificationResult {
                    thought,
                    category,
                    raw,
                    outcome: ClassificationOutcome::Repaired,
                }
            }
            Err(e) => (raw, e),
        },
        Err(e) => (String::new(), MalformedOutput::Provider(e.to_string())),
    };
    tracing::warn!(ticket = %ticket.id, first = %error, second = %second_error, "unusable classification output, defaulting to Others");
    ClassificationResult {
        thought: format!("classification output unusable ({second_error}); defaulted to {OTHERS}"),
        category: OTHERS.to_owned(),
        raw,
        outcome: ClassificationOutcome::FailSafe,
    }
}

/// A stored example with its transcript embedding. `id` increases with insertion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct StoredExample<S: Scalar> {
    pub id: u64,
    pub example: IclExample,
    pub embedding: Embedding<S>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct ExampleStore<S: Scalar> {
    entries: Vec<StoredExample<S>>,
}

impl<S: Scalar> Default for ExampleStore<S> {
    fn default() -> Self {
        Self { entries: Vec::new() }
    }
}

impl<S: Scalar> ExampleStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, example: IclExample, embedder: &dyn Embedder<S>) -> Result<u64, EmbeddingError> {
        let embedding = embedder.embed(&example.transcript)?;
        Ok(self.insert_embedded(example, embedding))
    }

    pub fn insert_embedded(&mut self, example: IclExample, embedding: Embedding<S>) -> u64 {
        let id = self.entries.last().map_or(0, |e| e.id + 1);
        self.entries.push(StoredExample { id, example, embedding });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoredExample<S>] {
        &self.entries
    }

    /// Top-`k` entries by cosine similarity to `query`, descending; ties go to the older id.
    pub fn top_k(&self, query: &Embedding<S>, k: usize) -> Result<Vec<(&StoredExample<S>, S)>, EmbeddingError> {
        let mut scored = self
            .entries
            .iter()
            .map(|e| cosine_similarity(query, &e.embedding).map(|s| (e, s)))
            .collect::<Result<Vec<_>, _>>()?;
        scored.sort_by(|(a, sa), (b, sb)| {
            sb.partial_cmp(sa)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.id.cmp(&b.id))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// Text used to embed a ticket for example retrieval.
pub fn retrieval_text(ticket: &Ticket, max_messages: usize) -> String {
    format!(
        "{}\n{}",
        ticket.title,
        render_transcript(&ticket.transcript, max_messages)
    )
}

/// Retrieves the `k` stored examples most similar to the ticket's transcript.
pub fn retrieve_icl_examples<S: Scalar>(
    store: &ExampleStore<S>,
    ticket: &Ticket,
    k: usize,
    embedder: &dyn Embedder<S>,
    max_messages: usize,
) -> Result<Vec<(IclExample, S)>, EmbeddingError> {
    if store.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let query = embedder.embed(&retrieval_text(ticket, max_messages))?;
    Ok(store
        .top_k(&query, k)?
        .into_iter()
        .map(|(e, s)| (e.example.clone(), s))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashedBagOfWords;
    use crate::mock::MockProvider;
    use crate::provider::{Role, ScriptedProvider, UnavailableProvider};
    use crate::ticket::{Message, TicketId};

    fn ticket(texts: &[&str]) -> Ticket {
        let mut t = Ticket::accept(TicketId::new("t1").unwrap(), "help", 0);
        for (i, text) in texts.iter().enumerate() {
            t.transcript.push(Message::customer(*text, i as i64));
        }
        t
    }

    fn example(cat: &str) -> IclExample {
        IclExample {
            transcript: format!("customer: a {cat} case"),
            thought: "because".into(),
            category: cat.into(),
        }
    }

    #[test]
    fn zero_examples_give_two_messages() {
        let p = build_prompt(&PromptSpec::default(), &ticket(&["hi"]), &[]);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].role, Role::System);
        assert_eq!(p[1].role, Role::User);
        assert!(p[0].content.starts_with(prompts::TASK_CLASSIFY));
        assert!(p[0].content.contains(PromptSpec::DEFAULT_ROLE));
        assert!(p[0].content.contains(PromptSpec::DEFAULT_COT));
        assert!(p[0].content.contains("structured format"));
        for c in default_categories() {
            assert!(p[0].content.contains(&format!("- {}: {}", c.name, c.description)));
        }
        assert!(!p[1].content.contains("<example"));
    }

    #[test]
    fn examples_precede_ticket_in_order() {
        let spec = PromptSpec::default()
            .with_icl_examples(vec![example("Asset Loss")])
            .unwrap();
        let retrieved = [example("System Failure"), example("Others")];
        let p = build_prompt(&spec, &ticket(&["disk gone"]), &retrieved);
        let user = &p[1].content;
        let blocks = prompts::sections(user, "example");
        assert_eq!(blocks.len(), 3);
        assert!(blocks[0].contains("Asset Loss"));
        assert!(blocks[1].contains("System Failure"));
        assert!(blocks[2].contains("<category>Others</category>"));
        assert!(user.rfind("</example>").unwrap() < user.find("<ticket>").unwrap());
    }

    #[test]
    fn long_transcript_truncated() {
        let texts: Vec<String> = (0..40).map(|i| format!("message {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let p = build_prompt(&PromptSpec::default(), &ticket(&refs), &[]);
        let body = prompts::last_section(&p[1].content, "ticket").unwrap();
        let message_lines = body.lines().filter(|l| l.starts_with("customer: ")).count();
        assert_eq!(message_lines, 30);
        assert!(body.contains("[10 earlier messages omitted]"));
        assert!(!body.contains("message 9\n") && body.contains("message 10"));
    }

    #[test]
    fn spec_validation() {
        let dup = vec![TicketCategory::new("A", ""), TicketCategory::new("A", "")];
        assert_eq!(
            PromptSpec::new(dup),
            Err(PromptSpecError::DuplicateCategory("A".into()))
        );
        let spec = PromptSpec::new(vec![TicketCategory::new("A", "a")]).unwrap();
        assert_eq!(spec.category_names().collect::<Vec<_>>(), vec!["A", OTHERS]);
        assert_eq!(
            spec.clone().with_icl_examples(vec![example("B")]),
            Err(PromptSpecError::UnknownExampleCategory("B".into()))
        );
        assert!(spec.with_max_messages(0).is_err());
    }

    #[test]
    fn mock_refund_dispute_is_complaint() {
        let r = classify(
            &MockProvider::default(),
            &PromptSpec::default(),
            &ticket(&["I have a refund dispute about my invoice"]),
        );
        assert_eq!(r.category, "Customer Complaint");
        assert_eq!(r.outcome, ClassificationOutcome::Parsed);
        assert!(!r.thought.is_empty());
        assert!(r.escalates());
    }

    #[test]
    fn documentation_lookup_is_others() {
        let r = classify(
            &MockProvider::default(),
            &PromptSpec::default(),
            &ticket(&["where can I find the documentation for the billing export api"]),
        );
        assert_eq!(r.category, OTHERS);
        assert!(!r.escalates());
    }

    #[test]
    fn invalid_category_repaired_then_fail_safe() {
        let p = ScriptedProvider::new([
            r#"{"thought":"it is down","category":"Outage"}"#,
            r#"{"thought":"still down","category":"Outage"}"#,
        ]);
        let r = classify(&p, &PromptSpec::default(), &ticket(&["service down"]));
        assert_eq!(r.category, OTHERS);
        assert_eq!(r.outcome, ClassificationOutcome::FailSafe);
        let calls = p.calls();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[1].len(), 4);
        assert_eq!(calls[1][2].role, Role::Assistant);
        assert!(calls[1][3].content.contains("Outage"));
    }

    #[test]
    fn repair_succeeds() {
        let p = ScriptedProvider::new([
            "I think it is a System Failure",
            "```json\n{\"thought\":\"instances fail\",\"category\":\"system failure\"}\n```",
        ]);
        let r = classify(&p, &PromptSpec::default(), &ticket(&["instances fail"]));
        assert_eq!(r.category, "System Failure");
        assert_eq!(r.outcome, ClassificationOutcome::Repaired);
    }

    #[test]
    fn unreachable_provider_is_fail_safe() {
        let r = classify(&UnavailableProvider, &PromptSpec::default(), &ticket(&["breach"]));
        assert_eq!(r.category, OTHERS);
        assert_eq!(r.outcome, ClassificationOutcome::FailSafe);
    }

    #[test]
    fn parse_errors() {
        let spec = PromptSpec::default();
        assert_eq!(parse_classification(&spec, "nope"), Err(MalformedOutput::NoJson));
        assert_eq!(
            parse_classification(&spec, r#"{"category":"Others"}"#),
            Err(MalformedOutput::MissingField("thought"))
        );
        assert!(matches!(
            parse_classification(&spec, "{oops}"),
            Err(MalformedOutput::InvalidJson(_))
        ));
    }

    #[test]
    fn retrieval_edge_cases() {
        let emb = HashedBagOfWords::new(128);
        let mut store = ExampleStore::<f64>::new();
        assert!(retrieve_icl_examples(&store, &ticket(&["x"]), 3, &emb, 30)
            .unwrap()
            .is_empty());
        let t = ticket(&["the load balancer returns 502 errors"]);
        store
            .insert(
                IclExample {
                    transcript: retrieval_text(&t, 30),
                    thought: "lb errors".into(),
                    category: "System Failure".into(),
                },
                &emb,
            )
            .unwrap();
        let got = retrieve_icl_examples(&store, &t, 3, &emb, 30).unwrap();
        assert_eq!(got.len(), 1);
        assert!((got[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn top_k_ties_prefer_older() {
        let mut store = ExampleStore::<f64>::new();
        let v = Embedding::new(vec![1.0, 0.0]).unwrap();
        for cat in ["A", "B", "C"] {
            store.insert_embedded(example(cat), v.clone());
        }
        let got = store.top_k(&v, 2).unwrap();
        assert_eq!(got.iter().map(|(e, _)| e.id).collect::<Vec<_>>(), vec![0, 1]);
    }
}
