//! Shared domain vocabulary: frames, events, detections, scenarios and the
//! analytics records shipped from the edge to the cloud.
//!
//! Confidences and thresholds are percentages in `[0, 100]`. Timestamps are
//! logical simulation milliseconds.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logical simulation time in milliseconds.
pub type LogicalMs = u64;

/// Threshold applied when nothing else is configured.
pub const DEFAULT_THRESHOLD: f64 = 90.0;
/// The relaxed threshold that trades precision for recall.
pub const RELAXED_THRESHOLD: f64 = 70.0;

/// Checks that `value` is a percentage in `[0, 100]`.
pub fn check_percent(what: &str, value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=100.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::validation(format!("{what} must be in [0, 100], got {value}")))
    }
}

/// Checks that `value` is a fraction in `[0, 1]`.
pub fn check_fraction(what: &str, value: f64) -> Result<f64> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::validation(format!("{what} must be in [0, 1], got {value}")))
    }
}

/// The detection scenarios the edge knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    FaceRecognition,
    UnsafeContent,
    AnimalDetection,
    NoteworthyVehicle,
    MultiObject,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::FaceRecognition,
        ScenarioKind::UnsafeContent,
        ScenarioKind::AnimalDetection,
        ScenarioKind::NoteworthyVehicle,
        ScenarioKind::MultiObject,
    ];

    /// The detection API operation that serves this scenario.
    pub fn api_operation(self) -> DetectionApi {
        match self {
            ScenarioKind::FaceRecognition => DetectionApi::Faces,
            ScenarioKind::UnsafeContent => DetectionApi::Moderation,
            ScenarioKind::NoteworthyVehicle => DetectionApi::Text,
            ScenarioKind::AnimalDetection | ScenarioKind::MultiObject => DetectionApi::Labels,
        }
    }

    /// Short key used in activity snapshots.
    pub fn short_name(self) -> &'static str {
        match self {
            ScenarioKind::FaceRecognition => "face",
            ScenarioKind::UnsafeContent => "unsafe",
            ScenarioKind::AnimalDetection => "animal",
            ScenarioKind::NoteworthyVehicle => "vehicle",
            ScenarioKind::MultiObject => "multi",
        }
    }

    /// Human-readable noun phrase.
    pub fn describe(self) -> &'static str {
        match self {
            ScenarioKind::FaceRecognition => "face",
            ScenarioKind::UnsafeContent => "unsafe content",
            ScenarioKind::AnimalDetection => "animal",
            ScenarioKind::NoteworthyVehicle => "noteworthy vehicle",
            ScenarioKind::MultiObject => "object",
        }
    }

    /// Built-in label vocabulary. The first entry is the scenario's primary
    /// target; spurious detections are drawn from this list.
    pub fn vocabulary(self) -> &'static [&'static str] {
        match self {
            ScenarioKind::FaceRecognition => &["face"],
            ScenarioKind::UnsafeContent => &["gun", "knife", "violence", "nudity"],
            ScenarioKind::AnimalDetection => &["dog", "cat", "bird", "fox"],
            ScenarioKind::NoteworthyVehicle => &["fedex", "dhl", "usps", "ambulance", "firetruck"],
            ScenarioKind::MultiObject => &["person", "car", "package", "bicycle"],
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// The four detection endpoints of the cloud vision service.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionApi {
    Faces,
    Moderation,
    Text,
    Labels,
}

impl DetectionApi {
    pub fn path(self) -> &'static str {
        match self {
            DetectionApi::Faces => "/detect/faces",
            DetectionApi::Moderation => "/detect/moderation",
            DetectionApi::Text => "/detect/text",
            DetectionApi::Labels => "/detect/labels",
        }
    }

    /// Name of the result list in the response body.
    pub fn result_field(self) -> &'static str {
        match self {
            DetectionApi::Faces => "face_matches",
            DetectionApi::Moderation => "moderation_labels",
            DetectionApi::Text => "text_detections",
            DetectionApi::Labels => "labels",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        [
            DetectionApi::Faces,
            DetectionApi::Moderation,
            DetectionApi::Text,
            DetectionApi::Labels,
        ]
        .into_iter()
        .find(|api| api.path() == path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub kind: ScenarioKind,
}

impl Label {
    /// Builds a label, canonicalizing the name to a lowercase token.
    pub fn new(name: &str, kind: ScenarioKind) -> Result<Self> {
        let name = name.trim().to_lowercase();
        if name.is_empty() {
            return Err(Error::validation("label name must be non-empty"));
        }
        Ok(Label { name, kind })
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceCategory {
    Family,
    Friend,
    Visitor,
    Unknown,
}

impl FaceCategory {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "family" => Ok(FaceCategory::Family),
            "friend" => Ok(FaceCategory::Friend),
            "visitor" => Ok(FaceCategory::Visitor),
            "unknown" => Ok(FaceCategory::Unknown),
            other => Err(Error::validation(format!("unknown face category {other:?}"))),
        }
    }
}

impl fmt::Display for FaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaceCategory::Family => "Family",
            FaceCategory::Friend => "Friend",
            FaceCategory::Visitor => "Visitor",
            FaceCategory::Unknown => "Unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceIdentity {
    pub identity: String,
    pub category: FaceCategory,
}

/// Normalized rectangle, every coordinate in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: Label,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<FaceIdentity>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bounding_box: Option<BoundingBox>,
}

impl Detection {
    pub fn new(label: Label, confidence: f64) -> Result<Self> {
        check_percent("confidence", confidence)?;
        Ok(Detection {
            label,
            confidence,
            identity: None,
            bounding_box: None,
        })
    }

    pub fn with_identity(mut self, identity: FaceIdentity) -> Result<Self> {
        if self.label.kind != ScenarioKind::FaceRecognition {
            return Err(Error::validation(format!(
                "identity attached to non-face label {}",
                self.label
            )));
        }
        self.identity = Some(identity);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_percent("confidence", self.confidence)?;
        if self.identity.is_some() && self.label.kind != ScenarioKind::FaceRecognition {
            return Err(Error::validation("identity present on a non-face detection"));
        }
        if let Some(b) = &self.bounding_box {
            for v in [b.left, b.top, b.width, b.height] {
                check_fraction("box coordinate", v)?;
            }
        }
        Ok(())
    }
}

/// Keeps exactly the detections with `confidence >= threshold`, in order.
pub fn apply_confidence_threshold(detections: &[Detection], threshold: f64) -> Result<Vec<Detection>> {
    check_percent("threshold", threshold)?;
    Ok(detections
        .iter()
        .filter(|d| d.confidence >= threshold)
        .cloned()
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DeviceId(String);

impl DeviceId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::validation(format!("invalid device id {id:?}")));
        }
        Ok(DeviceId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DeviceId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DeviceId::new(s)
    }
}

impl From<DeviceId> for String {
    fn from(d: DeviceId) -> String {
        d.0
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `"<device_id>:<sequence>"`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EventId(String);

impl EventId {
    /// Formats an id without uniqueness tracking. See [`EventIdIssuer`].
    pub fn new(device: &DeviceId, sequence: u64) -> Self {
        EventId(format!("{device}:{sequence}"))
    }

    pub fn parse(s: &str) -> Result<(DeviceId, u64)> {
        let (device, seq) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::validation(format!("malformed event id {s:?}")))?;
        let seq = seq
            .parse::<u64>()
            .map_err(|_| Error::validation(format!("malformed event sequence in {s:?}")))?;
        Ok((DeviceId::new(device)?, seq))
    }

    pub fn sequence(&self) -> u64 {
        // constructed through new() or parse(), so this cannot fail
        EventId::parse(&self.0).map(|(_, s)| s).unwrap_or_default()
    }

    pub fn device(&self) -> DeviceId {
        EventId::parse(&self.0)
            .map(|(d, _)| d)
            .unwrap_or_else(|_| DeviceId(self.0.clone()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EventId {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        EventId::parse(&s)?;
        Ok(EventId(s))
    }
}

impl From<EventId> for String {
    fn from(e: EventId) -> String {
        e.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hands out event ids and rejects a sequence that was already issued for
/// the same device.
#[derive(Debug, Default)]
pub struct EventIdIssuer {
    issued: HashMap<DeviceId, HashSet<u64>>,
    next: HashMap<DeviceId, u64>,
}

impl EventIdIssuer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn issue(&mut self, device: &DeviceId, sequence: u64) -> Result<EventId> {
        if !self.issued.entry(device.clone()).or_default().insert(sequence) {
            return Err(Error::Conflict(format!(
                "sequence {sequence} already issued for device {device}"
            )));
        }
        let next = self.next.entry(device.clone()).or_default();
        *next = (*next).max(sequence + 1);
        Ok(EventId::new(device, sequence))
    }

    /// Issues the next sequence after the highest one issued so far.
    pub fn next(&mut self, device: &DeviceId) -> EventId {
        let seq = self.next.get(device).copied().unwrap_or(0);
        self.issue(device, seq)
            .expect("next sequence is always above every issued one")
    }
}

/// One captured frame. `truth` stands in for pixel content; only detector
/// backends look at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub frame_id: String,
    pub device_id: DeviceId,
    pub captured_at: LogicalMs,
    pub truth: BTreeSet<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_identity: Option<String>,
    pub scenario: ScenarioKind,
}

impl FrameSample {
    pub fn truth_names(&self) -> BTreeSet<String> {
        self.truth.iter().map(|l| l.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MotionEvent {
    pub device_id: DeviceId,
    pub at: LogicalMs,
    pub event_id: EventId,
}

/// Metadata envelope shipped from the edge to the cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsRecord {
    pub event_id: EventId,
    pub device_id: DeviceId,
    pub frame_id: String,
    pub detections: Vec<Detection>,
    pub backend_id: String,
    pub captured_at: LogicalMs,
    pub detected_at: LogicalMs,
    pub threshold_used: f64,
}

impl AnalyticsRecord {
    pub fn validate(&self) -> Result<()> {
        check_percent("threshold_used", self.threshold_used)?;
        if self.detected_at < self.captured_at {
            return Err(Error::validation("detected_at precedes captured_at"));
        }
        if self.event_id.device() != self.device_id {
            return Err(Error::validation(format!(
                "event {} does not belong to device {}",
                self.event_id, self.device_id
            )));
        }
        for d in &self.detections {
            d.validate()?;
            if d.confidence < self.threshold_used {
                return Err(Error::validation(format!(
                    "detection {} below threshold {}",
                    d.label, self.threshold_used
                )));
            }
        }
        Ok(())
    }

    pub fn predicted_names(&self) -> BTreeSet<String> {
        self.detections.iter().map(|d| d.label.name.clone()).collect()
    }
}
