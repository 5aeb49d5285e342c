use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::backends::BackendCategory;
use crate::error::{Error, Result};

use super::experiment::ExperimentReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub backend_id: String,
    pub category: BackendCategory,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: u64,
    pub memory_mb: f64,
    pub cpu_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_digest: String,
    pub rows: Vec<ComparisonRow>,
}

/// One row per backend, best F1 first (undefined F1 last, ties by id).
pub fn compare_backends(reports: &[ExperimentReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::validation("a comparison needs at least two reports"));
    }
    let digest = &reports[0].dataset_digest;
    if let Some(other) = reports.iter().find(|r| &r.dataset_digest != digest) {
        return Err(Error::validation(format!(
            "report for {} used a different dataset than {}",
            other.backend_id, reports[0].backend_id
        )));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            backend_id: r.backend_id.clone(),
            category: r.category,
            accuracy: r.overall.metrics.accuracy,
            precision: r.overall.metrics.precision,
            recall: r.overall.metrics.recall,
            f1: r.overall.metrics.f1,
            mean_latency_ms: r.latency.mean_ms,
            p95_latency_ms: r.latency.p95_ms,
            memory_mb: r.resources.memory_mb,
            cpu_pct: r.resources.cpu_pct,
        })
        .collect();
    rows.sort_by(|a, b| {
        let key = |f: Option<f64>| f.unwrap_or(f64::NEG_INFINITY);
        key(b.f1)
            .total_cmp(&key(a.f1))
            .then_with(|| a.backend_id.cmp(&b.backend_id))
    });
    Ok(Comparison {
        dataset_digest: digest.clone(),
        rows,
    })
}

pub const CSV_HEADER: [&str; 14] = [
    "backend",
    "scenario",
    "tp",
    "fn",
    "fp",
    "tn",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "mean_latency_ms",
    "p95_latency_ms",
    "memory_mb",
    "cpu_pct",
];

fn ratio(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// One row per (backend, scenario). Latency and resource columns repeat
/// the backend-level values.
pub fn write_csv<W: Write>(reports: &[ExperimentReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        for m in &r.scenarios {
            w.write_record([
                r.backend_id.clone(),
                m.scenario.short_name().to_string(),
                m.counts.tp.to_string(),
                m.counts.fn_.to_string(),
                m.counts.fp.to_string(),
                m.counts.tn.to_string(),
                ratio(Some(m.metrics.accuracy)),
                ratio(m.metrics.precision),
                ratio(m.metrics.recall),
                ratio(m.metrics.f1),
                format!("{:.2}", r.latency.mean_ms),
                r.latency.p95_ms.to_string(),
                format!("{:.2}", r.resources.memory_mb),
                format!("{:.2}", r.resources.cpu_pct),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn csv_string(reports: &[ExperimentReport]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
