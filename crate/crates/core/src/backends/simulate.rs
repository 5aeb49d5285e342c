use std::sync::Arc;

use crate::draw;
use crate::error::{Error, Result};
use crate::model::{Detection, FaceCategory, FaceIdentity, FrameSample, Label, ScenarioKind};

use super::faces::FaceStore;
use super::profile::BackendProfile;
use super::{Detector, Inference};

/// Draws the detections a backend described by `profile` reports for
/// `frame`.
///
/// Each decision is keyed by `(seed, frame_id, backend_id, label, purpose)`,
/// so the outcome for a frame does not depend on which other frames were
/// processed or in what order. Truth labels are visited in sorted order.
pub fn simulate_detect(
    frame: &FrameSample,
    scenario: ScenarioKind,
    profile: &BackendProfile,
    seed: u64,
) -> Result<Vec<Detection>> {
    if frame.scenario != scenario {
        return Err(Error::Routing(format!(
            "frame {} is a {} frame, routed as {}",
            frame.frame_id, frame.scenario, scenario
        )));
    }
    let id = profile.backend_id.as_str();
    let fid = frame.frame_id.as_str();
    let mut out = Vec::new();

    for label in &frame.truth {
        let name = label.name.as_str();
        let confidence = if draw::unit(seed, &[fid, id, name, "hit"]) < profile.hit_probability(scenario) {
            profile
                .confidence_model
                .at(draw::unit(seed, &[fid, id, name, "hit-confidence"]))
        } else if draw::unit(seed, &[fid, id, name, "near-miss"]) < profile.near_miss_rate {
            profile
                .near_miss_confidence
                .at(draw::unit(seed, &[fid, id, name, "near-miss-confidence"]))
        } else {
            continue;
        };
        out.push(Detection::new(label.clone(), confidence)?);
    }

    if frame.truth.is_empty() && draw::unit(seed, &[fid, id, "spurious"]) < profile.false_positive_rate {
        let vocab = scenario.vocabulary();
        let name = vocab[draw::index(seed, &[fid, id, "spurious-label"], vocab.len())];
        let confidence = profile
            .spurious_confidence
            .at(draw::unit(seed, &[fid, id, "spurious-confidence"]));
        out.push(Detection::new(Label::new(name, scenario)?, confidence)?);
    }
    Ok(out)
}

/// Attaches identities to face detections by searching `collection`.
/// A face with no identity token in the frame is reported as unknown.
pub(crate) fn attach_identities(
    detections: Vec<Detection>,
    frame: &FrameSample,
    faces: &FaceStore,
    collection_id: &str,
) -> Result<Vec<Detection>> {
    detections
        .into_iter()
        .map(|d| {
            if d.label.kind != ScenarioKind::FaceRecognition {
                return Ok(d);
            }
            let identity = match frame.truth_identity.as_deref() {
                Some(token) if frame.truth.contains(&d.label) => faces.search(collection_id, token)?,
                _ => FaceIdentity {
                    identity: "unrecognized".into(),
                    category: FaceCategory::Unknown,
                },
            };
            d.with_identity(identity)
        })
        .collect()
}

/// An on-device or on-edge backend: no network, latency is the profile's
/// service time.
#[derive(Debug, Clone)]
pub struct SimulatedDetector {
    profile: BackendProfile,
    seed: u64,
    faces: Option<(Arc<FaceStore>, String)>,
}

impl SimulatedDetector {
    pub fn new(profile: BackendProfile, seed: u64) -> Self {
        SimulatedDetector {
            profile,
            seed,
            faces: None,
        }
    }

    /// Recognized faces are looked up in `collection_id`.
    pub fn with_faces(mut self, faces: Arc<FaceStore>, collection_id: impl Into<String>) -> Self {
        self.faces = Some((faces, collection_id.into()));
        self
    }
}

impl Detector for SimulatedDetector {
    fn descriptor(&self) -> &BackendProfile {
        &self.profile
    }

    fn detect(&self, frame: &FrameSample, scenario: ScenarioKind) -> Result<Inference> {
        let mut detections = simulate_detect(frame, scenario, &self.profile, self.seed)?;
        if let Some((faces, coll)) = &self.faces {
            if faces.contains(coll) {
                detections = attach_identities(detections, frame, faces, coll)?;
            }
        }
        Ok(Inference {
            detections,
            latency_ms: self.profile.service_time_ms,
        })
    }
}
