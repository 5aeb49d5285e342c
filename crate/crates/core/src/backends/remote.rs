use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::model::{Detection, FrameSample, ScenarioKind};
use crate::protocol::{ApiRequest, Transport};

use super::network::NetworkModel;
use super::profile::BackendProfile;
use super::{Detector, Inference, DEFAULT_COLLECTION};

#[derive(Debug, Deserialize, Serialize)]
struct DetectResponse {
    service_time_ms: u64,
    #[serde(flatten)]
    results: serde_json::Map<String, serde_json::Value>,
}

/// Client for the cloud detection API. Latency is the logical round trip:
/// uplink delay + service time reported by the server + downlink delay.
pub struct RemoteDetector {
    profile: BackendProfile,
    transport: Arc<dyn Transport>,
    network: NetworkModel,
    collection_id: String,
    seed: u64,
}

impl RemoteDetector {
    pub fn new(profile: BackendProfile, transport: Arc<dyn Transport>, network: NetworkModel, seed: u64) -> Self {
        RemoteDetector {
            profile,
            transport,
            network,
            collection_id: DEFAULT_COLLECTION.to_string(),
            seed,
        }
    }

    pub fn with_collection(mut self, collection_id: impl Into<String>) -> Self {
        self.collection_id = collection_id.into();
        self
    }
}

impl Detector for RemoteDetector {
    fn descriptor(&self) -> &BackendProfile {
        &self.profile
    }

    fn detect(&self, frame: &FrameSample, scenario: ScenarioKind) -> Result<Inference> {
        if frame.scenario != scenario {
            return Err(Error::Routing(format!(
                "frame {} is a {} frame, routed as {}",
                frame.frame_id, frame.scenario, scenario
            )));
        }
        let api = scenario.api_operation();
        let body = match scenario {
            ScenarioKind::FaceRecognition => json!({ "collection_id": self.collection_id, "frame": frame }),
            _ => json!({ "frame": frame }),
        };
        let fail = |reason: String| Error::DetectionFailed {
            frame_id: frame.frame_id.clone(),
            reason,
        };
        let response = self
            .transport
            .call(&ApiRequest::post(api.path(), body))
            .map_err(|e| fail(e.to_string()))?;
        let data = response.into_data().map_err(|e| match e {
            Error::Unavailable(m) => fail(m),
            other => other,
        })?;
        let parsed: DetectResponse =
            serde_json::from_value(data).map_err(|e| Error::Protocol(format!("malformed detection response: {e}")))?;
        let list = parsed
            .results
            .get(api.result_field())
            .cloned()
            .ok_or_else(|| Error::Protocol(format!("response lacks {}", api.result_field())))?;
        let detections: Vec<Detection> =
            serde_json::from_value(list).map_err(|e| Error::Protocol(format!("malformed detections: {e}")))?;
        for d in &detections {
            d.validate().map_err(|e| Error::Protocol(e.to_string()))?;
        }

        let up = self.network.one_way(self.seed, &[&frame.frame_id, "uplink"]);
        let down = self.network.one_way(self.seed, &[&frame.frame_id, "downlink"]);
        Ok(Inference {
            detections,
            latency_ms: up + parsed.service_time_ms + down,
        })
    }
}
