use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ScenarioKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    TP,
    FN,
    FP,
    TN,
}

/// Outcome for one target label on one frame.
pub fn classify_outcome(truth: &BTreeSet<String>, predicted: &BTreeSet<String>, target: &str) -> Outcome {
    match (truth.contains(target), predicted.contains(target)) {
        (true, true) => Outcome::TP,
        (true, false) => Outcome::FN,
        (false, true) => Outcome::FP,
        (false, false) => Outcome::TN,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fn_, fp, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn add(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::TP => self.tp += 1,
            Outcome::FN => self.fn_ += 1,
            Outcome::FP => self.fp += 1,
            Outcome::TN => self.tn += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.fp += other.fp;
        self.tn += other.tn;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// Accuracy, precision, recall and F1 from raw counts. Precision and recall
/// are absent when their denominators are zero.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<Metrics> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::validation("cannot derive metrics from zero outcomes"));
    }
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    Ok(Metrics {
        accuracy: (counts.tp + counts.tn) as f64 / total as f64,
        precision,
        recall,
        f1: precision.zip(recall).and_then(|(p, r)| f1_score(p, r)),
    })
}

/// Harmonic mean of precision and recall; absent when both are zero or
/// either is outside `[0, 1]`.
pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let valid = |x: f64| (0.0..=1.0).contains(&x);
    if !valid(precision) || !valid(recall) || precision + recall == 0.0 {
        return None;
    }
    Some(2.0 * precision * recall / (precision + recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub backend_id: String,
    pub scenario: ScenarioKind,
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

impl MetricsReport {
    pub fn new(backend_id: &str, scenario: ScenarioKind, counts: ConfusionCounts) -> Result<Self> {
        Ok(MetricsReport {
            backend_id: backend_id.to_string(),
            scenario,
            counts,
            metrics: compute_metrics(&counts)?,
        })
    }
}
