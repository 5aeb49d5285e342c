use std::collections::{BTreeSet, HashSet};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, EventId, FaceCategory, LogicalMs, ScenarioKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubscriptionFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub devices: Option<BTreeSet<DeviceId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<BTreeSet<ScenarioKind>>,
}

impl SubscriptionFilter {
    /// A scenario filter matches when any detection belongs to one of the
    /// scenarios, so records without detections never pass it.
    pub fn matches(&self, record: &AnalyticsRecord) -> bool {
        let device_ok = self.devices.as_ref().is_none_or(|d| d.contains(&record.device_id));
        let scenario_ok = self
            .scenarios
            .as_ref()
            .is_none_or(|s| record.detections.iter().any(|d| s.contains(&d.label.kind)));
        device_ok && scenario_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Notification {
    pub event_id: EventId,
    pub device_id: DeviceId,
    pub summary: String,
    pub at: LogicalMs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub subscriber_id: String,
    #[serde(default)]
    pub filter: SubscriptionFilter,
    #[serde(default)]
    pub delivery_log: Vec<Notification>,
}

#[derive(Debug, Default)]
struct Inner {
    subscriptions: Vec<Subscription>,
    delivered: HashSet<(String, EventId)>,
}

/// Fan-out of alerts to subscribers. A subscriber sees at most one
/// notification per event id no matter how often the event is published.
#[derive(Debug, Default)]
pub struct Notifier {
    inner: RwLock<Inner>,
}

impl Notifier {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, subscriber_id: &str, filter: SubscriptionFilter) -> Result<()> {
        let mut inner = self.inner.write();
        if inner.subscriptions.iter().any(|s| s.subscriber_id == subscriber_id) {
            return Err(Error::Conflict(format!("subscriber {subscriber_id} exists")));
        }
        inner.subscriptions.push(Subscription {
            subscriber_id: subscriber_id.to_string(),
            filter,
            delivery_log: Vec::new(),
        });
        Ok(())
    }

    /// Delivers `record` to every matching subscriber that has not seen it.
    /// Returns the number of new deliveries.
    pub fn publish(&self, record: &AnalyticsRecord, at: LogicalMs) -> usize {
        let summary = summarize(record);
        let mut guard = self.inner.write();
        let Inner {
            subscriptions,
            delivered,
        } = &mut *guard;
        let mut count = 0;
        for sub in subscriptions.iter_mut() {
            if !sub.filter.matches(record) {
                continue;
            }
            if !delivered.insert((sub.subscriber_id.clone(), record.event_id.clone())) {
                continue;
            }
            sub.delivery_log.push(Notification {
                event_id: record.event_id.clone(),
                device_id: record.device_id.clone(),
                summary: summary.clone(),
                at,
            });
            count += 1;
        }
        count
    }

    pub fn subscription(&self, subscriber_id: &str) -> Option<Subscription> {
        self.inner
            .read()
            .subscriptions
            .iter()
            .find(|s| s.subscriber_id == subscriber_id)
            .cloned()
    }

    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.inner.read().subscriptions.clone()
    }

    pub fn total_deliveries(&self) -> usize {
        self.inner
            .read()
            .subscriptions
            .iter()
            .map(|s| s.delivery_log.len())
            .sum()
    }
}

/// One phrase per detection, e.g. `Known face: alice (Family)`.
pub fn describe_detections(record: &AnalyticsRecord) -> Vec<String> {
    record
        .detections
        .iter()
        .map(|d| match (d.label.kind, &d.identity) {
            (ScenarioKind::FaceRecognition, Some(id)) if id.category != FaceCategory::Unknown => {
                format!("Known face: {} ({})", id.identity, id.category)
            }
            (ScenarioKind::FaceRecognition, Some(id)) => {
                format!("Face: unknown person ({})", id.identity)
            }
            (ScenarioKind::FaceRecognition, None) => "Face detected".to_string(),
            (ScenarioKind::UnsafeContent, _) => format!("Unsafe content: {}", d.label),
            (ScenarioKind::AnimalDetection, _) => format!("Animal: {}", d.label),
            (ScenarioKind::NoteworthyVehicle, _) => format!("Noteworthy vehicle: {}", d.label),
            (ScenarioKind::MultiObject, _) => format!("Object: {}", d.label),
        })
        .collect()
}

pub fn summarize(record: &AnalyticsRecord) -> String {
    let parts = describe_detections(record);
    if parts.is_empty() {
        format!("{}: motion detected", record.device_id)
    } else {
        format!("{}: {}", record.device_id, parts.join("; "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Detection, FaceIdentity, Label};

    fn face_record(device: &str, seq: u64, identity: &str, category: FaceCategory) -> AnalyticsRecord {
        let d = DeviceId::new(device).unwrap();
        let det = Detection::new(Label::new("face", ScenarioKind::FaceRecognition).unwrap(), 95.0)
            .unwrap()
            .with_identity(FaceIdentity {
                identity: identity.into(),
                category,
            })
            .unwrap();
        AnalyticsRecord {
            event_id: EventId::new(&d, seq),
            device_id: d,
            frame_id: "f".into(),
            detections: vec![det],
            backend_id: "b".into(),
            captured_at: 0,
            detected_at: 1,
            threshold_used: 90.0,
        }
    }

    #[test]
    fn fan_out_and_filters() {
        let n = Notifier::new();
        n.subscribe("phone", SubscriptionFilter::default()).unwrap();
        n.subscribe(
            "door2-only",
            SubscriptionFilter {
                devices: Some([DeviceId::new("door-2").unwrap()].into()),
                scenarios: None,
            },
        )
        .unwrap();
        assert!(n.subscribe("phone", SubscriptionFilter::default()).is_err());

        let r = face_record("door-1", 0, "alice", FaceCategory::Family);
        assert_eq!(n.publish(&r, 5), 1);
        assert_eq!(n.publish(&r, 6), 0, "republishing does not notify twice");
        let log = n.subscription("phone").unwrap().delivery_log;
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].summary, "door-1: Known face: alice (Family)");
        assert!(n.subscription("door2-only").unwrap().delivery_log.is_empty());
    }

    #[test]
    fn zero_subscribers_is_noop() {
        let n = Notifier::new();
        assert_eq!(n.publish(&face_record("door-1", 0, "a", FaceCategory::Friend), 0), 0);
    }

    #[test]
    fn unknown_face_summary() {
        let r = face_record("door-1", 0, "mallory", FaceCategory::Unknown);
        assert!(summarize(&r).contains("unknown"));
    }

    #[test]
    fn scenario_filter() {
        let f = SubscriptionFilter {
            devices: None,
            scenarios: Some([ScenarioKind::UnsafeContent].into()),
        };
        assert!(!f.matches(&face_record("door-1", 0, "a", FaceCategory::Family)));
    }
}
