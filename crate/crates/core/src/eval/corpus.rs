//! Seeded synthetic ticket streams with embedded ground truth.
//!
//! Three families: a general paraphrase corpus, a constructed-geometry corpus
//! whose mock-embedding similarities are known in closed form, and a drift
//! corpus where later group members wander away from the founder's wording.
//! Every family emits the live ingestion event schema.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{EscalationLabelSet, GroupingLabelSet};
use crate::embedding::{fnv1a, tokenize};
use crate::engine::{EventPayload, IngestEvent, TicketTruth};
use crate::mock::{default_rules, MockProvider, DEFAULT_PRODUCTS};
use crate::ticket::{Message, TicketId, OTHERS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub events: Vec<IngestEvent>,
}

impl Corpus {
    pub fn truths(&self) -> BTreeMap<TicketId, TicketTruth> {
        self.events
            .iter()
            .filter_map(|e| match &e.payload {
                EventPayload::TicketCreated { truth: Some(t), .. } => Some((e.ticket_id.clone(), t.clone())),
                _ => None,
            })
            .collect()
    }

    pub fn escalation_labels(&self) -> EscalationLabelSet {
        self.truths().into_iter().map(|(id, t)| (id, t.escalate)).collect()
    }

    pub fn grouping_labels(&self) -> GroupingLabelSet {
        self.truths().into_iter().map(|(id, t)| (id, t.group)).collect()
    }

    pub fn ticket_ids(&self) -> Vec<TicketId> {
        self.truths().into_keys().collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.events
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("tickets_per_group range {0}..={1} is empty or starts at zero")]
    GroupSizes(usize, usize),
    #[error("{field} must lie in [0, 1], got {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("others_fraction of 1 leaves no room for {0} groups")]
    NoRoomForGroups(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub n_groups: usize,
    /// Group sizes are drawn uniformly from this inclusive range.
    pub tickets_per_group: (usize, usize),
    /// Probability that each template word of a ticket is replaced.
    pub paraphrase_noise: f64,
    /// Share of benign tickets in the corpus.
    pub others_fraction: f64,
    /// Lower bound on the total ticket count, filled with benign tickets.
    #[serde(default)]
    pub min_tickets: usize,
    /// Share of tickets closed somewhere after their last message.
    #[serde(default)]
    pub close_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            n_groups: 20,
            tickets_per_group: (10, 10),
            paraphrase_noise: 0.2,
            others_fraction: 0.0,
            min_tickets: 0,
            close_fraction: 0.0,
            seed: 7,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (lo, hi) = self.tickets_per_group;
        if lo == 0 || lo > hi {
            return Err(CorpusError::GroupSizes(lo, hi));
        }
        for (field, value) in [
            ("paraphrase_noise", self.paraphrase_noise),
            ("others_fraction", self.others_fraction),
            ("close_fraction", self.close_fraction),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CorpusError::OutOfRange { field, value });
            }
        }
        if self.others_fraction >= 1.0 && self.n_groups > 0 {
            return Err(CorpusError::NoRoomForGroups(self.n_groups));
        }
        Ok(())
    }
}

/// Invented words that hit no keyword rule, stopword or product name.
struct Vocabulary {
    mock: MockProvider,
    used: HashSet<String>,
    /// Hash buckets already taken, when collisions must be avoided.
    buckets: Option<(usize, HashSet<usize>)>,
}

const SYLLABLES: &[&str] = &[
    "ka", "zu", "mi", "to", "ve", "ro", "na", "pi", "sho", "gle", "dra", "wen", "ju", "qua", "bo", "xi",
];

impl Vocabulary {
    fn new(distinct_buckets: Option<usize>) -> Self {
        Self {
            mock: MockProvider::default(),
            used: HashSet::new(),
            buckets: distinct_buckets.map(|d| (d, HashSet::new())),
        }
    }

    fn acceptable(&self, w: &str) -> bool {
        !self.used.contains(w)
            && self.mock.match_rule(w).is_none()
            && self.mock.content_words(w).len() == 1
            && !DEFAULT_PRODUCTS.iter().any(|p| tokenize(p).any(|t| t == w))
            && self
                .buckets
                .as_ref()
                .is_none_or(|(dim, taken)| !taken.contains(&bucket(w, *dim)))
    }

    fn word(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.gen_range(2..=4);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
            if self.acceptable(&w) {
                self.claim(&w);
                return w;
            }
        }
    }

    fn claim(&mut self, w: &str) {
        self.used.insert(w.to_owned());
        if let Some((dim, taken)) = &mut self.buckets {
            taken.insert(bucket(w, *dim));
        }
    }

    fn words(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n).map(|_| self.word(rng)).collect()
    }
}

fn bucket(token: &str, dim: usize) -> usize {
    (fnv1a(token.as_bytes()) % dim as u64) as usize
}

/// A ticket before it becomes events.
struct Draft {
    title: String,
    customer: String,
    truth: TicketTruth,
}

const GREETINGS: &[&str] = &[
    "hello, I have a question",
    "hi there, can you help me",
    "hello support team",
];

/// Emits `created`, optionally a greeting, the problem statement and (with
/// the greeting) an analyst reply per ticket, in draft order. Each ticket in
/// `closes` is closed at a random point after its last message.
fn emit(drafts: Vec<Draft>, per_ticket_greeting: bool, closes: Option<(&[bool], &mut ChaCha8Rng)>) -> Corpus {
    let width = drafts.len().to_string().len().max(3);
    let ids: Vec<TicketId> = (0..drafts.len())
        .map(|i| TicketId::new(format!("t{i:0width$}")).unwrap())
        .collect();
    let mut events = Vec::new();
    let mut last = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.iter().enumerate() {
        let id = ids[i].clone();
        events.push(IngestEvent {
            ticket_id: id.clone(),
            timestamp: 0,
            payload: EventPayload::TicketCreated {
                title: d.title.clone(),
                truth: Some(d.truth.clone()),
            },
        });
        if per_ticket_greeting {
            let g = GREETINGS[i % GREETINGS.len()];
            events.push(IngestEvent::message(id.clone(), Message::customer(g, 0)));
        }
        events.push(IngestEvent::message(
            id.clone(),
            Message::customer(d.customer.clone(), 0),
        ));
        if per_ticket_greeting {
            events.push(IngestEvent::message(
                id,
                Message::analyst("thanks, we are looking into it", 0),
            ));
        }
        last.push(events.len());
    }
    if let Some((close, rng)) = closes {
        let n = events.len();
        let mut at: Vec<(usize, usize)> = close
            .iter()
            .enumerate()
            .filter(|(_, c)| **c)
            .map(|(i, _)| (rng.gen_range(last[i]..=n), i))
            .collect();
        at.sort();
        for (k, (pos, i)) in at.into_iter().enumerate() {
            events.insert(pos + k, IngestEvent::closed(ids[i].clone(), 0));
        }
    }
    for (ts, ev) in events.iter_mut().enumerate() {
        ev.timestamp = ts as i64 + 1;
        if let EventPayload::MessageAppended { message } = &mut ev.payload {
            message.timestamp = ev.timestamp;
        }
    }
    Corpus { events }
}

/// Shuffles tickets across groups while keeping each group's internal order.
fn interleave<T>(groups: Vec<Vec<T>>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut slots: Vec<usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, v)| std::iter::repeat_n(g, v.len()))
        .collect();
    slots.shuffle(rng);
    let mut iters: Vec<_> = groups.into_iter().map(Vec::into_iter).collect();
    slots.into_iter().map(|g| iters[g].next().unwrap()).collect()
}

fn keyword_for(category_index: usize) -> (String, String) {
    let rules = default_rules();
    let rule = &rules[category_index % rules.len()];
    let kw = rule
        .keywords
        .iter()
        .find(|k| !k.contains(' '))
        .cloned()
        .unwrap_or_else(|| rule.keywords[0].clone());
    (rule.category.clone(), kw)
}

fn benign_draft(vocab: &mut Vocabulary, rng: &mut ChaCha8Rng) -> Draft {
    let words = vocab.words(6, rng);
    Draft {
        title: "question".into(),
        customer: format!("where can I find the {} settings", words.join(" ")),
        truth: TicketTruth {
            escalate: false,
            category: OTHERS.into(),
            group: None,
        },
    }
}

/// General corpus: each group shares a template of invented words plus a
/// category keyword and product; each word is paraphrased with probability
/// `paraphrase_noise`. Benign tickets use fresh words and no keyword.
pub fn generate_corpus(spec: &SyntheticCorpusSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabulary::new(None);
    const TEMPLATE_WORDS: usize = 10;

    let mut groups: Vec<Vec<Draft>> = Vec::new();
    for g in 0..spec.n_groups {
        let (category, kw) = keyword_for(g);
        let product = DEFAULT_PRODUCTS[g % DEFAULT_PRODUCTS.len()];
        let template = vocab.words(TEMPLATE_WORDS, &mut rng);
        let size = rng.gen_range(spec.tickets_per_group.0..=spec.tickets_per_group.1);
        let members = (0..size)
            .map(|_| {
                let words: Vec<String> = template
                    .iter()
                    .map(|w| {
                        if rng.gen_bool(spec.paraphrase_noise) {
                            vocab.word(&mut rng)
                        } else {
                            w.clone()
                        }
                    })
                    .collect();
                Draft {
                    title: format!("{product} problem"),
                    customer: format!("{kw} on {product}: {}", words.join(" ")),
                    truth: TicketTruth {
                        escalate: true,
                        category: category.clone(),
                        group: Some(format!("g{g:03}")),
                    },
                }
            })
            .collect();
        groups.push(members);
    }
    let grouped: usize = groups.iter().map(Vec::len).sum();
    let mut benign = if spec.others_fraction >= 1.0 {
        0
    } else {
        (grouped as f64 * spec.others_fraction / (1.0 - spec.others_fraction)).round() as usize
    };
    benign = benign.max(spec.min_tickets.saturating_sub(grouped));
    groups.push((0..benign).map(|_| benign_draft(&mut vocab, &mut rng)).collect());

    let drafts = interleave(groups, &mut rng);
    let close: Vec<bool> = (0..drafts.len()).map(|_| rng.gen_bool(spec.close_fraction)).collect();
    Ok(emit(drafts, true, Some((&close, &mut rng))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub n_groups: usize,
    pub tickets_per_group: usize,
    /// Add one near-miss ticket per group right after its founder.
    pub distractors: bool,
    pub benign: usize,
    /// Embedding dimension whose buckets must stay collision-free.
    pub dim: usize,
    pub seed: u64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            n_groups: 10,
            tickets_per_group: 6,
            distractors: true,
            benign: 10,
            dim: crate::embedding::HashedBagOfWords::DEFAULT_DIM,
            seed: 11,
        }
    }
}

/// Issue tokens shared by every escalating ticket (keyword included).
pub const GEOMETRY_SHARED: usize = 4;
/// Tokens specific to one group.
pub const GEOMETRY_GROUP: usize = 10;

/// Constructed-geometry corpus. Under the mock summarizer and hashed
/// embedder with distinct buckets, every issue is a set of 15 unit tokens:
///
/// * group member: shared (4) + group (10) + unique (1), so members of one
///   group meet at 14/15 and members of different groups at 4/15;
/// * distractor: shared + 9 of the group tokens + 2 unique, meeting its
///   group's members at 13/15 and the rewritten group issue at 13/sqrt(210).
///
/// Distractors are their own ground-truth group, so thresholds below 13/15
/// merge them wrongly and thresholds at or above 14/15 split every group.
pub fn geometry_corpus(spec: &GeometrySpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabulary::new(Some(spec.dim));
    let (category, kw) = keyword_for(3);
    vocab.claim(&kw);
    let mut shared = vec![kw.clone()];
    shared.extend(vocab.words(GEOMETRY_SHARED - 1, &mut rng));

    let mut groups = Vec::new();
    for g in 0..spec.n_groups {
        let own = vocab.words(GEOMETRY_GROUP, &mut rng);
        let member = |unique: &[String], drop_one: bool, label: String| {
            let group_part = if drop_one { &own[1..] } else { &own[..] };
            let words: Vec<&str> = shared
                .iter()
                .chain(group_part)
                .chain(unique)
                .map(String::as_str)
                .collect();
            Draft {
                title: "service problem".into(),
                customer: words.join(" "),
                truth: TicketTruth {
                    escalate: true,
                    category: category.clone(),
                    group: Some(label),
                },
            }
        };
        let mut drafts = Vec::new();
        for i in 0..spec.tickets_per_group {
            let unique = vocab.words(1, &mut rng);
            drafts.push(member(&unique, false, format!("g{g:03}")));
            if i == 0 && spec.distractors {
                let unique = vocab.words(2, &mut rng);
                drafts.push(member(&unique, true, format!("d{g:03}")));
            }
        }
        groups.push(drafts);
    }
    groups.push((0..spec.benign).map(|_| benign_draft(&mut vocab, &mut rng)).collect());
    let drafts = interleave(groups, &mut rng);
    emit(drafts, false, None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub n_groups: usize,
    pub tickets_per_group: usize,
    /// Template length; member `k` has `k` template words swapped.
    pub template_words: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            n_groups: 8,
            tickets_per_group: 6,
            template_words: 20,
            dim: crate::embedding::HashedBagOfWords::DEFAULT_DIM,
            seed: 5,
        }
    }
}

/// Drift corpus: member `k` of a group is the founder's template with its
/// first `k` drifting words replaced by the group's late vocabulary, so each
/// member sits one swap away from the previous one and `k` swaps away from
/// the founder.
pub fn drift_corpus(spec: &DriftSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut vocab = Vocabulary::new(Some(spec.dim));
    let (category, kw) = keyword_for(3);
    vocab.claim(&kw);
    let mut groups = Vec::new();
    for g in 0..spec.n_groups {
        let mut template = vec![kw.clone()];
        template.extend(vocab.words(spec.template_words - 1, &mut rng));
        let late = vocab.words(spec.tickets_per_group, &mut rng);
        // the keyword never drifts
        let mut drift_slots: Vec<usize> = (1..template.len()).collect();
        drift_slots.shuffle(&mut rng);
        let drafts = (0..spec.tickets_per_group)
            .map(|k| {
                let mut words = template.clone();
                for (j, slot) in drift_slots.iter().take(k).enumerate() {
                    words[*slot] = late[j].clone();
                }
                Draft {
                    title: "service problem".into(),
                    customer: words.join(" "),
                    truth: TicketTruth {
                        escalate: true,
                        category: category.clone(),
                        group: Some(format!("g{g:03}")),
                    },
                }
            })
            .collect();
        groups.push(drafts);
    }
    let drafts = interleave(groups, &mut rng);
    emit(drafts, false, None)
}
