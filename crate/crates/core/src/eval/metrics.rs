//! Precision, recall and F1 for escalation decisions and for pairwise
//! linkage of predicted escalation groups.

use std::collections::BTreeMap;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ticket::{TicketId, OTHERS};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Zero denominators give zero, so `(0, 0, n)` scores `(0, 0, 0)`.
pub fn prf1<T: Num + Copy>(tp: T, fp: T, fn_: T) -> Prf1<T> {
    let ratio = |num: T, den: T| if den.is_zero() { T::zero() } else { num / den };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let two = T::one() + T::one();
    let f1 = ratio(two * precision * recall, precision + recall);
    Prf1 { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn scores<T: Num + Copy + FromPrimitive>(&self) -> Prf1<T> {
        let c = |x: u64| T::from_u64(x).expect("count fits the scalar");
        prf1(c(self.tp), c(self.fp), c(self.fn_))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no label for ticket {0}")]
    MissingLabel(TicketId),
}

/// Per-ticket ground truth: should the ticket have been escalated.
pub type EscalationLabelSet = BTreeMap<TicketId, bool>;

/// Per-ticket ground-truth group; `None` is the shared non-escalated group.
pub type GroupingLabelSet = BTreeMap<TicketId, Option<String>>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct Evaluation<S: Scalar> {
    pub counts: Counts,
    pub scores: Prf1<S>,
}

impl<S: Scalar> Evaluation<S> {
    fn from_counts(counts: Counts) -> Self {
        Self {
            counts,
            scores: counts.scores(),
        }
    }
}

/// Escalation as the positive class. Every predicted ticket needs a label.
pub fn eval_escalation<S: Scalar>(
    predicted: &BTreeMap<TicketId, bool>,
    labels: &EscalationLabelSet,
) -> Result<Evaluation<S>, MetricError> {
    let mut counts = Counts::default();
    for (id, &p) in predicted {
        let truth = *labels.get(id).ok_or_else(|| MetricError::MissingLabel(id.clone()))?;
        match (p, truth) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(Evaluation::from_counts(counts))
}

/// Ticket escalated if its latest classification was not "Others".
pub fn predicted_escalations(
    predictions: &BTreeMap<TicketId, crate::ticket::Prediction>,
    tickets: impl IntoIterator<Item = TicketId>,
) -> BTreeMap<TicketId, bool> {
    tickets
        .into_iter()
        .map(|id| {
            let esc = predictions.get(&id).is_some_and(|p| p.category != OTHERS);
            (id, esc)
        })
        .collect()
}

/// Pairwise linkage over all unordered pairs of labeled tickets: a pair is
/// co-grouped when both sides carry the same non-`None` group. Tickets with
/// no prediction count as `None`; predictions without a label are an error.
pub fn eval_grouping<A: Ord, S: Scalar>(
    predicted: &BTreeMap<TicketId, Option<A>>,
    labels: &GroupingLabelSet,
) -> Result<Evaluation<S>, MetricError> {
    if let Some(id) = predicted.keys().find(|id| !labels.contains_key(*id)) {
        return Err(MetricError::MissingLabel(id.clone()));
    }
    // pair counts from group sizes instead of explicit enumeration
    let mut pred_sizes: BTreeMap<&A, u64> = BTreeMap::new();
    let mut true_sizes: BTreeMap<&String, u64> = BTreeMap::new();
    let mut joint: BTreeMap<(&A, &String), u64> = BTreeMap::new();
    for (id, truth) in labels {
        let pred = predicted.get(id).and_then(Option::as_ref);
        if let Some(p) = pred {
            *pred_sizes.entry(p).or_default() += 1;
        }
        if let Some(t) = truth.as_ref() {
            *true_sizes.entry(t).or_default() += 1;
        }
        if let (Some(p), Some(t)) = (pred, truth.as_ref()) {
            *joint.entry((p, t)).or_default() += 1;
        }
    }
    let pairs = |n: &u64| n * n.saturating_sub(1) / 2;
    let both: u64 = joint.values().map(pairs).sum();
    let pred_pairs: u64 = pred_sizes.values().map(pairs).sum();
    let true_pairs: u64 = true_sizes.values().map(pairs).sum();
    Ok(Evaluation::from_counts(Counts {
        tp: both,
        fp: pred_pairs - both,
        fn_: true_pairs - both,
    }))
}
