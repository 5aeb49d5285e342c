//! Structured activity queries ("what is happening at the door?").

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, LogicalMs};

use super::notify::describe_detections;
use super::store::MetadataStore;

pub const DAY_MS: u64 = 24 * 60 * 60 * 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    LatestActivity,
    DailySnapshot,
    RangeQuery,
}

impl QueryKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "latest-activity" | "latest_activity" => Ok(QueryKind::LatestActivity),
            "daily-snapshot" | "daily_snapshot" => Ok(QueryKind::DailySnapshot),
            "range-query" | "range_query" | "range" => Ok(QueryKind::RangeQuery),
            other => Err(Error::validation(format!("unknown query kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub from: LogicalMs,
    pub to: LogicalMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub kind: QueryKind,
    pub device_id: DeviceId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<TimeRange>,
}

impl QueryRequest {
    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.range) {
            (QueryKind::RangeQuery, None) => Err(Error::validation("range query requires a range")),
            (_, Some(r)) if r.from > r.to => Err(Error::validation(format!("inverted range [{}, {}]", r.from, r.to))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAnswer {
    pub summary: String,
    pub records: Vec<AnalyticsRecord>,
    /// Per-scenario counts, daily snapshots only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<BTreeMap<String, u64>>,
}

/// Answers `q` against `store` as of logical time `now`.
pub fn answer_query(q: &QueryRequest, store: &MetadataStore, now: LogicalMs) -> Result<QueryAnswer> {
    q.validate()?;
    let device = &q.device_id;
    match q.kind {
        QueryKind::LatestActivity => {
            let latest = store
                .all_for(device)
                .into_iter()
                .max_by_key(|r| (r.captured_at, r.event_id.sequence()));
            Ok(match latest {
                None => no_activity(device),
                Some(r) => {
                    let parts = describe_detections(&r);
                    let what = if parts.is_empty() {
                        "motion detected, nothing recognized".to_string()
                    } else {
                        parts.join("; ")
                    };
                    QueryAnswer {
                        summary: format!("Latest activity at {device} (t={} ms): {what}.", r.captured_at),
                        records: vec![r],
                        counts: None,
                    }
                }
            })
        }
        QueryKind::DailySnapshot => {
            let from = now.saturating_sub(DAY_MS);
            let records = store.get_activities(device, from, now)?;
            if records.is_empty() {
                return Ok(no_activity(device));
            }
            let counts = scenario_counts(&records);
            let listed: Vec<String> = counts.iter().map(|(k, v)| format!("{k}: {v}")).collect();
            let detail = if listed.is_empty() {
                "nothing recognized".to_string()
            } else {
                listed.join(", ")
            };
            Ok(QueryAnswer {
                summary: format!(
                    "In the last 24 h at {device}: {} event{}; {detail}.",
                    records.len(),
                    if records.len() == 1 { "" } else { "s" }
                ),
                records,
                counts: Some(counts),
            })
        }
        QueryKind::RangeQuery => {
            let r = q.range.expect("validated");
            let records = store.get_activities(device, r.from, r.to)?;
            if records.is_empty() {
                return Ok(no_activity(device));
            }
            Ok(QueryAnswer {
                summary: format!(
                    "{} event{} at {device} between {} and {} ms.",
                    records.len(),
                    if records.len() == 1 { "" } else { "s" },
                    r.from,
                    r.to
                ),
                records,
                counts: None,
            })
        }
    }
}

/// Each record counts once for every scenario it has a detection in.
pub fn scenario_counts(records: &[AnalyticsRecord]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for r in records {
        let mut kinds: Vec<_> = r.detections.iter().map(|d| d.label.kind).collect();
        kinds.sort();
        kinds.dedup();
        for k in kinds {
            *counts.entry(k.short_name().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

fn no_activity(device: &DeviceId) -> QueryAnswer {
    QueryAnswer {
        summary: format!("No activity at {device}."),
        records: Vec::new(),
        counts: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Detection, EventId, Label, ScenarioKind};

    fn rec(seq: u64, at: u64, kind: ScenarioKind, label: &str) -> AnalyticsRecord {
        let d = DeviceId::new("door-1").unwrap();
        AnalyticsRecord {
            event_id: EventId::new(&d, seq),
            device_id: d,
            frame_id: format!("f-{seq}"),
            detections: vec![Detection::new(Label::new(label, kind).unwrap(), 95.0).unwrap()],
            backend_id: "b".into(),
            captured_at: at,
            detected_at: at + 1,
            threshold_used: 90.0,
        }
    }

    fn q(kind: QueryKind) -> QueryRequest {
        QueryRequest {
            kind,
            device_id: DeviceId::new("door-1").unwrap(),
            range: None,
        }
    }

    #[test]
    fn latest_mentions_unsafe_content() {
        let store = MetadataStore::new();
        store.put(&rec(0, 100, ScenarioKind::UnsafeContent, "gun"));
        let a = answer_query(&q(QueryKind::LatestActivity), &store, 200).unwrap();
        assert!(a.summary.to_lowercase().contains("unsafe content"), "{}", a.summary);
        assert_eq!(a.records.len(), 1);
    }

    #[test]
    fn empty_store_reports_no_activity() {
        let store = MetadataStore::new();
        for kind in [QueryKind::LatestActivity, QueryKind::DailySnapshot] {
            let a = answer_query(&q(kind), &store, 0).unwrap();
            assert!(a.summary.to_lowercase().contains("no activity"));
        }
    }

    #[test]
    fn daily_snapshot_counts_match_naive_count() {
        let store = MetadataStore::new();
        let kinds = [
            (ScenarioKind::FaceRecognition, "face"),
            (ScenarioKind::AnimalDetection, "dog"),
            (ScenarioKind::FaceRecognition, "face"),
            (ScenarioKind::AnimalDetection, "cat"),
            (ScenarioKind::FaceRecognition, "face"),
        ];
        let now = 3 * DAY_MS;
        let mut all = Vec::new();
        for (i, (k, l)) in kinds.iter().enumerate() {
            let r = rec(i as u64, now - 1000 * (i as u64 + 1), *k, l);
            store.put(&r);
            all.push(r);
        }
        // yesterday's record is outside the window
        store.put(&rec(9, now - DAY_MS - 1, ScenarioKind::UnsafeContent, "gun"));

        let mut naive: BTreeMap<String, u64> = BTreeMap::new();
        for r in &all {
            *naive.entry(r.detections[0].label.kind.short_name().into()).or_default() += 1;
        }
        let a = answer_query(&q(QueryKind::DailySnapshot), &store, now).unwrap();
        assert_eq!(a.counts.unwrap(), naive);
        assert_eq!(naive, BTreeMap::from([("animal".into(), 2), ("face".into(), 3)]));
    }

    #[test]
    fn range_validation() {
        let store = MetadataStore::new();
        assert!(answer_query(&q(QueryKind::RangeQuery), &store, 0).is_err());
        let mut bad = q(QueryKind::RangeQuery);
        bad.range = Some(TimeRange { from: 5, to: 1 });
        assert!(answer_query(&bad, &store, 0).is_err());
        store.put(&rec(0, 3, ScenarioKind::AnimalDetection, "dog"));
        let mut ok = q(QueryKind::RangeQuery);
        ok.range = Some(TimeRange { from: 0, to: 10 });
        assert_eq!(answer_query(&ok, &store, 0).unwrap().records.len(), 1);
    }
}
