//! Server side of the four detection endpoints.

use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};

use crate::backends::{attach_identities, simulate_detect, BackendProfile, FaceStore, DEFAULT_COLLECTION};
use crate::error::{Error, Result};
use crate::model::{DetectionApi, FrameSample};

#[derive(Debug, Deserialize)]
struct DetectRequest {
    frame: FrameSample,
    #[serde(default)]
    collection_id: Option<String>,
}

/// Answers detection calls with the cloud backend's profile. Responses are a
/// pure function of `(seed, frame, enrolled faces)`.
pub struct DetectionService {
    profile: BackendProfile,
    faces: Arc<FaceStore>,
    seed: u64,
}

impl DetectionService {
    pub fn new(profile: BackendProfile, faces: Arc<FaceStore>, seed: u64) -> Result<Self> {
        profile.validate()?;
        Ok(DetectionService { profile, faces, seed })
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    pub fn handle(&self, api: DetectionApi, body: Value) -> Result<Value> {
        let req: DetectRequest =
            serde_json::from_value(body).map_err(|e| Error::Protocol(format!("malformed detect request: {e}")))?;
        let frame = req.frame;
        if frame.scenario.api_operation() != api {
            return Err(Error::Routing(format!(
                "{} frames are served by {}, not {}",
                frame.scenario,
                frame.scenario.api_operation().path(),
                api.path()
            )));
        }
        let mut detections = simulate_detect(&frame, frame.scenario, &self.profile, self.seed)?;
        if api == DetectionApi::Faces {
            let coll = req.collection_id.as_deref().unwrap_or(DEFAULT_COLLECTION);
            if !self.faces.contains(coll) {
                return Err(Error::NotFound(format!("face collection {coll}")));
            }
            detections = attach_identities(detections, &frame, &self.faces, coll)?;
        }
        let mut data = serde_json::Map::new();
        data.insert(api.result_field().to_string(), serde_json::to_value(&detections)?);
        data.insert("service_time_ms".into(), json!(self.profile.service_time_ms));
        Ok(Value::Object(data))
    }
}
