use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_fraction, check_percent, ScenarioKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendCategory {
    OnDeviceMl,
    OnDeviceDl,
    CloudSaas,
    OnEdge,
}

impl BackendCategory {
    /// Whether detection requires a network round trip.
    pub fn is_remote(self) -> bool {
        matches!(self, BackendCategory::CloudSaas)
    }
}

/// Uniform confidence band `[mean - spread, mean + spread)`, clamped to
/// `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub mean: f64,
    pub spread: f64,
}

impl ConfidenceBand {
    pub const fn new(mean: f64, spread: f64) -> Self {
        ConfidenceBand { mean, spread }
    }

    pub fn low(&self) -> f64 {
        (self.mean - self.spread).clamp(0.0, 100.0)
    }

    pub fn high(&self) -> f64 {
        (self.mean + self.spread).clamp(0.0, 100.0)
    }

    /// Maps a unit draw onto the band.
    pub fn at(&self, unit: f64) -> f64 {
        (self.low() + (self.high() - self.low()) * unit).clamp(0.0, 100.0)
    }

    fn validate(&self, what: &str) -> Result<()> {
        check_percent(what, self.mean)?;
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::validation(format!("{what} spread must be >= 0")));
        }
        Ok(())
    }
}

/// Confident detections of present objects land in `[90, 100)`.
pub const DEFAULT_HIT_BAND: ConfidenceBand = ConfidenceBand::new(95.0, 5.0);
/// Low-confidence detections of present objects land in `[70, 90)`.
pub const DEFAULT_NEAR_MISS_BAND: ConfidenceBand = ConfidenceBand::new(80.0, 10.0);
/// Spurious detections land in `[70, 90)`.
pub const DEFAULT_SPURIOUS_BAND: ConfidenceBand = ConfidenceBand::new(80.0, 10.0);

/// Confusion, latency and resource model standing in for one detection
/// approach.
///
/// A present object is detected confidently (band `confidence_model`) with
/// probability `per_scenario_recall[scenario]`. Otherwise, with probability
/// `near_miss_rate`, it is still reported but with a low confidence from
/// `near_miss_confidence`, which a strict threshold then discards. Frames
/// with nothing in them yield a spurious label with probability
/// `false_positive_rate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub backend_id: String,
    pub category: BackendCategory,
    pub memory_mb: f64,
    pub cpu_pct: f64,
    pub service_time_ms: u64,
    pub per_scenario_recall: BTreeMap<ScenarioKind, f64>,
    pub false_positive_rate: f64,
    #[serde(default = "hit_band")]
    pub confidence_model: ConfidenceBand,
    #[serde(default)]
    pub near_miss_rate: f64,
    #[serde(default = "near_miss_band")]
    pub near_miss_confidence: ConfidenceBand,
    #[serde(default = "spurious_band")]
    pub spurious_confidence: ConfidenceBand,
    /// Probability that a present face goes unrecognized. Defaults to
    /// `1 - recall[face_recognition]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_miss_probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

fn hit_band() -> ConfidenceBand {
    DEFAULT_HIT_BAND
}
fn near_miss_band() -> ConfidenceBand {
    DEFAULT_NEAR_MISS_BAND
}
fn spurious_band() -> ConfidenceBand {
    DEFAULT_SPURIOUS_BAND
}

impl BackendProfile {
    /// Same recall for every scenario, defaults elsewhere.
    pub fn uniform(backend_id: &str, category: BackendCategory, recall: f64, false_positive_rate: f64) -> Self {
        BackendProfile {
            backend_id: backend_id.to_string(),
            category,
            memory_mb: 1.0,
            cpu_pct: 1.0,
            service_time_ms: 10,
            per_scenario_recall: ScenarioKind::ALL.iter().map(|&s| (s, recall)).collect(),
            false_positive_rate,
            confidence_model: DEFAULT_HIT_BAND,
            near_miss_rate: 0.0,
            near_miss_confidence: DEFAULT_NEAR_MISS_BAND,
            spurious_confidence: DEFAULT_SPURIOUS_BAND,
            face_miss_probability: None,
            notes: None,
        }
    }

    /// Detects everything, invents nothing.
    pub fn perfect(backend_id: &str) -> Self {
        BackendProfile::uniform(backend_id, BackendCategory::OnDeviceDl, 1.0, 0.0)
    }

    pub fn recall(&self, scenario: ScenarioKind) -> f64 {
        self.per_scenario_recall.get(&scenario).copied().unwrap_or(0.0)
    }

    /// Probability of a confident detection of a present object.
    pub fn hit_probability(&self, scenario: ScenarioKind) -> f64 {
        match (scenario, self.face_miss_probability) {
            (ScenarioKind::FaceRecognition, Some(miss)) => 1.0 - miss,
            _ => self.recall(scenario),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend_id.is_empty() {
            return Err(Error::validation("backend_id must be non-empty"));
        }
        if !(self.memory_mb.is_finite() && self.memory_mb > 0.0) {
            return Err(Error::validation(format!("{}: memory_mb must be > 0", self.backend_id)));
        }
        check_percent("cpu_pct", self.cpu_pct)?;
        for s in ScenarioKind::ALL {
            let r = self
                .per_scenario_recall
                .get(&s)
                .ok_or_else(|| Error::validation(format!("{}: no recall for scenario {s}", self.backend_id)))?;
            check_fraction("recall", *r)?;
        }
        check_fraction("false_positive_rate", self.false_positive_rate)?;
        check_fraction("near_miss_rate", self.near_miss_rate)?;
        if let Some(m) = self.face_miss_probability {
            check_fraction("face_miss_probability", m)?;
        }
        self.confidence_model.validate("confidence_model")?;
        self.near_miss_confidence.validate("near_miss_confidence")?;
        self.spurious_confidence.validate("spurious_confidence")?;
        Ok(())
    }
}

/// The shipped profiles.
///
/// Resource figures are the measured memory/CPU of each approach. The cloud
/// service's recall values are its measured per-scenario recall at a
/// confidence threshold of 90. On-device recall and false-positive rates were
/// only ever published as a chart, so those numbers are estimates chosen to
/// keep the F1 ordering cloud > MobileNet SSD > HOG+SVM > Haar.
pub fn default_profiles() -> Vec<BackendProfile> {
    use BackendCategory::*;
    use ScenarioKind::*;

    let cloud = BackendProfile {
        backend_id: "aws-saas".into(),
        category: CloudSaas,
        memory_mb: 1.99,
        cpu_pct: 28.0,
        service_time_ms: 20,
        per_scenario_recall: [
            (FaceRecognition, 0.90),
            (UnsafeContent, 0.88),
            (AnimalDetection, 0.80),
            (NoteworthyVehicle, 0.86),
            (MultiObject, 0.88),
        ]
        .into_iter()
        .collect(),
        false_positive_rate: 0.0,
        // every miss at threshold 90 is a low-confidence hit, recovered at 70
        near_miss_rate: 1.0,
        notes: Some("recall measured at confidence threshold 90".into()),
        ..BackendProfile::uniform("aws-saas", CloudSaas, 0.0, 0.0)
    };

    let on_device = |id: &str, category, memory_mb, cpu_pct, service_time_ms, recall, fp| BackendProfile {
        memory_mb,
        cpu_pct,
        service_time_ms,
        near_miss_rate: 0.5,
        notes: Some("estimated recall and false-positive rate".into()),
        ..BackendProfile::uniform(id, category, recall, fp)
    };

    vec![
        cloud,
        on_device("mobilenet-ssd", OnDeviceDl, 473.96, 33.30, 55, 0.85, 0.02),
        on_device("hog-svm", OnDeviceMl, 30.09, 30.0, 40, 0.70, 0.05),
        on_device("haar", OnDeviceMl, 22.86, 30.20, 25, 0.60, 0.08),
    ]
}

/// Profiles by id, loadable from a JSON array.
#[derive(Debug, Clone)]
pub struct ProfileRegistry {
    profiles: BTreeMap<String, BackendProfile>,
    order: Vec<String>,
}

impl ProfileRegistry {
    pub fn new(profiles: Vec<BackendProfile>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for p in profiles {
            p.validate()?;
            if map.contains_key(&p.backend_id) {
                return Err(Error::Conflict(format!("duplicate profile {}", p.backend_id)));
            }
            order.push(p.backend_id.clone());
            map.insert(p.backend_id.clone(), p);
        }
        Ok(ProfileRegistry { profiles: map, order })
    }

    pub fn defaults() -> Self {
        ProfileRegistry::new(default_profiles()).expect("default profiles are valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        ProfileRegistry::new(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ProfileRegistry::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.all())?)
    }

    pub fn get(&self, id: &str) -> Result<&BackendProfile> {
        self.profiles
            .get(id)
            .ok_or_else(|| Error::NotFound(format!("backend profile {id}")))
    }

    /// Profiles in registration order.
    pub fn all(&self) -> Vec<BackendProfile> {
        self.order.iter().map(|id| self.profiles[id].clone()).collect()
    }

    pub fn ids(&self) -> &[String] {
        &self.order
    }

    pub fn insert(&mut self, profile: BackendProfile) -> Result<()> {
        profile.validate()?;
        if !self.profiles.contains_key(&profile.backend_id) {
            self.order.push(profile.backend_id.clone());
        }
        self.profiles.insert(profile.backend_id.clone(), profile);
        Ok(())
    }
}
