//! Category-guided fine-tuning datasets built from derived labels.
//!
//! Correctly predicted tickets keep their original reasoning. Mispredicted
//! tickets contribute, depending on the mode, the flawed reasoning paired
//! with the true label ("Wrong"), several provider-generated reasonings
//! conditioned on the true label ("Revised"), or both.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{build_prompt_for_len, PromptSpec};
use crate::feedback::DerivedLabel;
use crate::jsonl;
use crate::prompts::{self, json_object_span, render_transcript};
use crate::provider::{ChatMessage, ChatProvider};
use crate::ticket::{Ticket, TicketId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyTag {
    Raw,
    Correct,
    Wrong,
    Revised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetMode {
    Raw,
    CorrectOnly,
    CorrectAndWrong,
    CorrectAndRevised,
    CorrectWrongRevised,
}

impl DatasetMode {
    pub const ALL: [DatasetMode; 5] = [
        DatasetMode::Raw,
        DatasetMode::CorrectOnly,
        DatasetMode::CorrectAndWrong,
        DatasetMode::CorrectAndRevised,
        DatasetMode::CorrectWrongRevised,
    ];

    pub fn cli_name(self) -> &'static str {
        match self {
            DatasetMode::Raw => "raw",
            DatasetMode::CorrectOnly => "correct",
            DatasetMode::CorrectAndWrong => "correct-wrong",
            DatasetMode::CorrectAndRevised => "correct-revised",
            DatasetMode::CorrectWrongRevised => "all",
        }
    }

    fn keeps_wrong(self) -> bool {
        matches!(self, DatasetMode::CorrectAndWrong | DatasetMode::CorrectWrongRevised)
    }

    fn revises(self) -> bool {
        matches!(self, DatasetMode::CorrectAndRevised | DatasetMode::CorrectWrongRevised)
    }
}

impl FromStr for DatasetMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.cli_name() == s).ok_or_else(|| {
            format!("unknown dataset mode {s:?}; expected raw, correct, correct-wrong, correct-revised or all")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub mode: DatasetMode,
    pub revised_samples_per_ticket: usize,
}

impl StrategyConfig {
    pub const DEFAULT_REVISIONS: usize = 3;

    pub fn new(mode: DatasetMode, revised_samples_per_ticket: usize) -> Result<Self, DatasetError> {
        if revised_samples_per_ticket == 0 {
            return Err(DatasetError::ZeroRevisions);
        }
        Ok(Self {
            mode,
            revised_samples_per_ticket,
        })
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            mode: DatasetMode::CorrectAndRevised,
            revised_samples_per_ticket: Self::DEFAULT_REVISIONS,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("revised_samples_per_ticket must be at least 1")]
    ZeroRevisions,
    #[error("no ticket {0} for label")]
    MissingTicket(TicketId),
    #[error("ticket {0} has no stored prediction")]
    MissingPrediction(TicketId),
    #[error("sample {index} fails validation: {reason}")]
    Invalid { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub thought: String,
    pub category: String,
}

/// One fine-tuning example. Field order is the on-disk field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftSample {
    pub prompt_messages: Vec<ChatMessage>,
    pub completion: Completion,
    pub strategy_tag: StrategyTag,
    pub ticket_id: TicketId,
}

pub const REVISION_INSTRUCTION: &str =
    "You are a meticulous expert of our cloud platform. An analyst has confirmed the \
correct category of the support ticket below. Write the step-by-step reasoning that leads from the ticket content to \
this category, as you would before answering a classification request. Respond only with a JSON object \
{\"thought\": \"<reasoning>\", \"category\": \"<the given category>\"}.";

const VARIANT_HINTS: [&str; 3] = [
    "Start from the customer's own description of the problem.",
    "Start from the affected product and the impact on the customer's business.",
    "Start by ruling out the categories that do not apply.",
];

fn variant_hint(variant: usize) -> String {
    VARIANT_HINTS
        .get(variant - 1)
        .map(|h| (*h).to_owned())
        .unwrap_or_else(|| "Take a reasoning path that differs from the obvious one.".to_owned())
}

/// Prompt asking for reasoning that supports `category`; `variant` is 1-based.
pub fn build_revision_prompt(
    ticket: &Ticket,
    transcript_len: usize,
    category: &str,
    variant: usize,
    max_messages: usize,
) -> Vec<ChatMessage> {
    let visible = &ticket.transcript[..transcript_len.min(ticket.transcript.len())];
    vec![
        ChatMessage::system(format!(
            "{}\n{}\nSampling variant {variant}: {}",
            prompts::TASK_REVISE,
            REVISION_INSTRUCTION,
            variant_hint(variant)
        )),
        ChatMessage::user(format!(
            "<ticket>\ntitle: {}\n{}\n</ticket>\n<category>{category}</category>\n<variant>{variant}</variant>",
            ticket.title,
            render_transcript(visible, max_messages)
        )),
    ]
}

fn parse_thought(raw: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(json_object_span(raw)?).ok()?;
    let t = v.get("thought")?.as_str()?.trim();
    (!t.is_empty()).then(|| t.to_owned())
}

/// Builds the corpus for `labels` in label order. Failed revisions are skipped.
pub fn build(
    labels: &[DerivedLabel],
    tickets: &BTreeMap<TicketId, Ticket>,
    provider: &dyn ChatProvider,
    spec: &PromptSpec,
    cfg: &StrategyConfig,
) -> Result<Vec<SftSample>, DatasetError> {
    let per_label: Vec<Result<Vec<SftSample>, DatasetError>> = labels
        .par_iter()
        .map(|label| samples_for(label, tickets, provider, spec, cfg))
        .collect();
    let mut out = Vec::new();
    for s in per_label {
        out.extend(s?);
    }
    Ok(out)
}

fn samples_for(
    label: &DerivedLabel,
    tickets: &BTreeMap<TicketId, Ticket>,
    provider: &dyn ChatProvider,
    spec: &PromptSpec,
    cfg: &StrategyConfig,
) -> Result<Vec<SftSample>, DatasetError> {
    let ticket = tickets
        .get(&label.ticket_id)
        .ok_or_else(|| DatasetError::MissingTicket(label.ticket_id.clone()))?;
    let transcript_len = ticket
        .prediction
        .as_ref()
        .ok_or_else(|| DatasetError::MissingPrediction(label.ticket_id.clone()))?
        .transcript_len;
    let prompt = build_prompt_for_len(spec, ticket, transcript_len, &[]);
    let sample = |thought: String, tag| SftSample {
        prompt_messages: prompt.clone(),
        completion: Completion {
            thought,
            category: label.label_category.clone(),
        },
        strategy_tag: tag,
        ticket_id: label.ticket_id.clone(),
    };

    let mut out = Vec::new();
    if cfg.mode == DatasetMode::Raw {
        out.push(sample(String::new(), StrategyTag::Raw));
        return Ok(out);
    }
    if label.prediction_correct() {
        out.push(sample(label.predicted_thought.clone(), StrategyTag::Correct));
        return Ok(out);
    }
    if cfg.mode.keeps_wrong() {
        out.push(sample(label.predicted_thought.clone(), StrategyTag::Wrong));
    }
    if cfg.mode.revises() {
        for variant in 1..=cfg.revised_samples_per_ticket {
            let request = build_revision_prompt(
                ticket,
                transcript_len,
                &label.label_category,
                variant,
                spec.max_messages(),
            );
            match provider.complete(&request, 0.0).ok().as_deref().and_then(parse_thought) {
                Some(thought) => out.push(sample(thought, StrategyTag::Revised)),
                None => tracing::warn!(ticket = %label.ticket_id, variant, "revision failed, sample skipped"),
            }
        }
    }
    Ok(out)
}

/// Checks one serialized record against the dataset schema.
pub fn validate_record(value: &serde_json::Value, spec: &PromptSpec) -> Result<(), String> {
    let obj = value.as_object().ok_or("record is not an object")?;
    let keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    let mut expected = ["completion", "prompt_messages", "strategy_tag", "ticket_id"];
    expected.sort_unstable();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    if sorted != expected {
        return Err(format!("unexpected fields {keys:?}"));
    }
    let messages = obj["prompt_messages"]
        .as_array()
        .ok_or("prompt_messages is not an array")?;
    if messages.is_empty() {
        return Err("prompt_messages is empty".into());
    }
    for m in messages {
        let role = m.get("role").and_then(|r| r.as_str()).ok_or("message without role")?;
        if !matches!(role, "system" | "user" | "assistant") {
            return Err(format!("bad role {role:?}"));
        }
        m.get("content")
            .and_then(|c| c.as_str())
            .ok_or("message without content")?;
    }
    let thought = obj["completion"]
        .get("thought")
        .and_then(|t| t.as_str())
        .ok_or("completion.thought missing")?;
    let category = obj["completion"]
        .get("category")
        .and_then(|c| c.as_str())
        .ok_or("completion.category missing")?;
    if spec.canonical_category(category) != Some(category) {
        return Err(format!("unknown category {category:?}"));
    }
    let tag = obj["strategy_tag"].as_str().ok_or("strategy_tag is not a string")?;
    match tag {
        "Raw" if !thought.is_empty() => return Err("Raw sample with a thought".into()),
        "Raw" => {}
        "Correct" | "Wrong" | "Revised" if thought.is_empty() => return Err(format!("{tag} sample without thought")),
        "Correct" | "Wrong" | "Revised" => {}
        other => return Err(format!("bad strategy_tag {other:?}")),
    }
    match obj["ticket_id"].as_str() {
        Some(id) if !id.is_empty() => Ok(()),
        _ => Err("ticket_id must be a non-empty string".into()),
    }
}

/// Writes `samples` as JSON lines, validating each record first.
pub fn emit(samples: &[SftSample], spec: &PromptSpec, path: &Path) -> Result<(), DatasetError> {
    for (index, s) in samples.iter().enumerate() {
        let value = serde_json::to_value(s).expect("samples serialize");
        validate_record(&value, spec).map_err(|reason| DatasetError::Invalid { index, reason })?;
    }
    jsonl::write_all(path, samples)?;
    Ok(())
}

pub fn read_samples(path: &Path) -> Result<Vec<SftSample>, DatasetError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| DatasetError::Parse { line: i + 1, source }))
        .collect()
}
