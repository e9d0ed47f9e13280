//! Independent oracles shared by the integration suites. Nothing here calls
//! into the library's similarity, pool or metric code.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use escalation_core::embedding::HashedBagOfWords;
use escalation_core::engine::{Engine, IngestEvent, Notice, PipelineSettings};
use escalation_core::eval::Providers;
use escalation_core::mock::MockProvider;
use escalation_core::ticket::{TicketId, TicketState};

pub fn id(s: &str) -> TicketId {
    TicketId::new(s).unwrap()
}

pub fn mock_providers() -> Providers<f64> {
    Providers {
        chat: Arc::new(MockProvider::default()),
        embedder: Arc::new(HashedBagOfWords::default()),
    }
}

pub fn mock_engine(settings: PipelineSettings) -> Engine<f64> {
    let p = mock_providers();
    Engine::new(settings, p.chat, p.embedder).unwrap()
}

/// Legal lifecycle edges, written out by hand: (from, event kind, to).
pub const LEGAL_EDGES: &[(&str, &str, &str)] = &[
    ("Active", "NewDialogue", "Analyzing"),
    ("Analyzing", "ClassifiedOthers", "Active"),
    ("Analyzing", "ClassifiedCategory", "Pending"),
    ("Pending", "NoSimilarFound", "Escalated"),
    ("Pending", "SimilarFound", "Linked"),
    ("Active", "CustomerClosed", "Closed"),
    ("Analyzing", "CustomerClosed", "Closed"),
    ("Pending", "CustomerClosed", "Closed"),
    ("Escalated", "CustomerClosed", "Closed"),
    ("Linked", "CustomerClosed", "Closed"),
];

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Linear scan: highest similarity, then earliest creation, then smallest id.
pub fn scan_argmax(pool: &[(String, i64, Vec<f64>)], query: &[f64]) -> Option<(String, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (id, created, v)) in pool.iter().enumerate() {
        let s = naive_cosine(v, query);
        let better = match best {
            None => true,
            Some((j, bs)) => {
                let (bid, bcreated, _) = &pool[j];
                s > bs || (s == bs && (created < bcreated || (created == bcreated && id < bid)))
            }
        };
        if better {
            best = Some((i, s));
        }
    }
    best.map(|(i, s)| (pool[i].0.clone(), s))
}

/// Explicit enumeration of unordered pairs: (tp, fp, fn).
pub fn pair_counts<A: PartialEq, B: PartialEq>(
    tickets: &[TicketId],
    pred: impl Fn(&TicketId) -> Option<A>,
    truth: impl Fn(&TicketId) -> Option<B>,
) -> (u64, u64, u64) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..tickets.len() {
        for j in i + 1..tickets.len() {
            let (pi, pj) = (pred(&tickets[i]), pred(&tickets[j]));
            let (ti, tj) = (truth(&tickets[i]), truth(&tickets[j]));
            let p = pi.is_some() && pi == pj;
            let t = ti.is_some() && ti == tj;
            match (p, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    (tp, fp, fn_)
}

fn fnv(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse bucket counts of a text under the hashed bag-of-words scheme.
pub fn bucket_counts(text: &str, dim: usize) -> HashMap<u64, f64> {
    let mut m = HashMap::new();
    for w in words(text) {
        *m.entry(fnv(w.as_bytes()) % dim as u64).or_insert(0.0) += 1.0;
    }
    m
}

pub fn sparse_cosine(a: &HashMap<u64, f64>, b: &HashMap<u64, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Tokens present in a strict majority of `issues`, in first-seen order.
pub fn majority_text(issues: &[String]) -> String {
    let per: Vec<Vec<String>> = issues
        .iter()
        .map(|i| {
            let mut seen = Vec::new();
            for w in words(i) {
                if !seen.contains(&w) {
                    seen.push(w);
                }
            }
            seen
        })
        .collect();
    let mut out: Vec<String> = Vec::new();
    for w in per.iter().flatten() {
        let c = per.iter().filter(|p| p.contains(w)).count();
        if 2 * c > per.len() && !out.contains(w) {
            out.push(w.clone());
        }
    }
    if out.is_empty() {
        issues[0].trim().to_owned()
    } else {
        out.join(" ")
    }
}

/// Sequential O(n^2) grouping: each arriving issue is compared against every
/// earlier group's current representation. Returns ticket -> group founder.
pub fn oracle_grouping(
    arrivals: &[(TicketId, String)],
    theta: f64,
    rewrite: bool,
    dim: usize,
) -> BTreeMap<TicketId, TicketId> {
    struct Group {
        founder: TicketId,
        issues: Vec<String>,
        rep: HashMap<u64, f64>,
    }
    let mut groups: Vec<Group> = Vec::new();
    let mut out = BTreeMap::new();
    for (ticket, issue) in arrivals {
        let q = bucket_counts(issue, dim);
        let mut best: Option<(usize, f64)> = None;
        for (i, g) in groups.iter().enumerate() {
            let s = sparse_cosine(&g.rep, &q).clamp(-1.0, 1.0);
            // groups are in creation order, so strict > keeps the earliest
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) if s > theta => {
                let g = &mut groups[i];
                g.issues.push(issue.clone());
                if rewrite {
                    g.rep = bucket_counts(&majority_text(&g.issues), dim);
                }
                out.insert(ticket.clone(), g.founder.clone());
            }
            _ => {
                groups.push(Group {
                    founder: ticket.clone(),
                    issues: vec![issue.clone()],
                    rep: q,
                });
                out.insert(ticket.clone(), ticket.clone());
            }
        }
    }
    out
}

/// Order in which tickets reached a pending resolution during a replay,
/// with the issue text each was resolved with.
pub fn resolution_order(engine: &mut Engine<f64>, events: &[IngestEvent]) -> Vec<TicketId> {
    let mut order = Vec::new();
    for ev in events {
        for n in engine.ingest(ev).unwrap() {
            if let Notice::Resolved { ticket_id, .. } = n {
                order.push(ticket_id);
            }
        }
    }
    order
}

pub fn state_name(s: TicketState) -> String {
    format!("{s:?}")
}
