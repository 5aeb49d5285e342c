#![allow(dead_code)]

use std::path::PathBuf;

use doorbell_core::cloud::{CloudConfig, CloudService};
use doorbell_core::model::{AnalyticsRecord, Detection, DeviceId, EventId, FrameSample, Label, ScenarioKind};
use doorbell_core::protocol::{ApiRequest, ApiResponse, Transport, SESSION_HEADER};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const GOLDEN_SEED: u64 = 2020;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: ApiRequest,
    pub response: ApiResponse,
}

impl Exchange {
    pub fn to_file_text(&self) -> String {
        serde_json::to_string_pretty(self).unwrap() + "\n"
    }
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn golden_cloud() -> CloudService {
    CloudService::new(CloudConfig {
        seed: GOLDEN_SEED,
        ..CloudConfig::default()
    })
    .unwrap()
}

fn frame(id: &str, scenario: ScenarioKind, truth: &[&str], identity: Option<&str>) -> Value {
    let f = FrameSample {
        frame_id: id.into(),
        device_id: DeviceId::new("door-1").unwrap(),
        captured_at: 1_000,
        truth: truth.iter().map(|t| Label::new(t, scenario).unwrap()).collect(),
        truth_identity: identity.map(String::from),
        scenario,
    };
    serde_json::to_value(f).unwrap()
}

fn data(r: &ApiResponse) -> &Value {
    r.body.data.as_ref().expect("ok response")
}

/// The scripted conversation behind the golden files. Later requests use
/// values (secret, token, blob ref) returned by earlier responses.
pub fn run_script(cloud: &dyn Transport) -> Vec<(String, Exchange)> {
    let mut out: Vec<(String, Exchange)> = Vec::new();
    let mut send = |name: &str, request: ApiRequest| -> ApiResponse {
        let response = cloud.call(&request).unwrap();
        out.push((
            name.to_string(),
            Exchange {
                request,
                response: response.clone(),
            },
        ));
        response
    };

    let reg = send(
        "01-devices-register",
        ApiRequest::post(
            "/devices/register",
            json!({"device_id": "door-1", "attributes": {"model": "doorbell-v2", "site": "front"}}),
        ),
    );
    let secret = data(&reg)["credential"]["secret"].as_str().unwrap().to_string();
    let auth = send(
        "02-devices-auth",
        ApiRequest::post("/devices/auth", json!({"device_id": "door-1", "secret": secret})),
    );
    let token = data(&auth)["session_token"].as_str().unwrap().to_string();
    send(
        "03-devices-auth-wrong-secret",
        ApiRequest::post("/devices/auth", json!({"device_id": "door-1", "secret": "0000"})),
    );
    send(
        "04-detect-faces-no-collection",
        ApiRequest::post(
            "/detect/faces",
            json!({"frame": frame("face-00000", ScenarioKind::FaceRecognition, &["face"], Some("alice"))}),
        ),
    );
    send(
        "05-faces-enroll",
        ApiRequest::post(
            "/faces/enroll",
            json!({"collection_id": "household", "identity": "alice", "category": "family"}),
        ),
    );
    send(
        "06-detect-faces-known",
        ApiRequest::post(
            "/detect/faces",
            json!({"frame": frame("face-00001", ScenarioKind::FaceRecognition, &["face"], Some("alice")), "collection_id": "household"}),
        ),
    );
    send(
        "07-detect-faces-unknown",
        ApiRequest::post(
            "/detect/faces",
            json!({"frame": frame("face-00002", ScenarioKind::FaceRecognition, &["face"], Some("mallory")), "collection_id": "household"}),
        ),
    );
    send(
        "08-detect-moderation",
        ApiRequest::post(
            "/detect/moderation",
            json!({"frame": frame("unsafe-00001", ScenarioKind::UnsafeContent, &["gun"], None)}),
        ),
    );
    send(
        "09-detect-text",
        ApiRequest::post(
            "/detect/text",
            json!({"frame": frame("vehicle-00001", ScenarioKind::NoteworthyVehicle, &["fedex"], None)}),
        ),
    );
    send(
        "10-detect-labels",
        ApiRequest::post(
            "/detect/labels",
            json!({"frame": frame("animal-00001", ScenarioKind::AnimalDetection, &["dog"], None)}),
        ),
    );
    send(
        "11-detect-labels-misrouted",
        ApiRequest::post(
            "/detect/labels",
            json!({"frame": frame("unsafe-00002", ScenarioKind::UnsafeContent, &["gun"], None)}),
        ),
    );

    let door = DeviceId::new("door-1").unwrap();
    let record = AnalyticsRecord {
        event_id: EventId::new(&door, 0),
        device_id: door,
        frame_id: "unsafe-00001".into(),
        detections: vec![Detection::new(Label::new("gun", ScenarioKind::UnsafeContent).unwrap(), 96.5).unwrap()],
        backend_id: "aws-saas".into(),
        captured_at: 1_000,
        detected_at: 1_100,
        threshold_used: 90.0,
    };
    let body = serde_json::to_value(&record).unwrap();
    send("12-ingest-no-session", ApiRequest::post("/ingest", body.clone()));
    send(
        "13-ingest",
        ApiRequest::post("/ingest", body.clone()).with_header(SESSION_HEADER, token.as_str()),
    );
    send(
        "14-ingest-duplicate",
        ApiRequest::post("/ingest", body).with_header(SESSION_HEADER, token.as_str()),
    );
    send(
        "15-activities",
        ApiRequest::get("/activities")
            .with_query("device", "door-1")
            .with_query("from", 0)
            .with_query("to", 5_000),
    );
    send(
        "16-query-latest-activity",
        ApiRequest::post("/query", json!({"kind": "latest_activity", "device_id": "door-1"})),
    );
    send(
        "17-query-daily-snapshot",
        ApiRequest::post("/query", json!({"kind": "daily_snapshot", "device_id": "door-1"})),
    );
    let put = send(
        "18-blobs-put",
        ApiRequest::post("/blobs", json!({"data_base64": "ZnJhbWUtYnl0ZXM="})),
    );
    let blob_ref = data(&put)["ref"].as_str().unwrap().to_string();
    send("19-blobs-get", ApiRequest::get(format!("/blobs/{blob_ref}")));
    send("20-blobs-get-missing", ApiRequest::get("/blobs/00"));
    send(
        "21-custom-labels",
        ApiRequest::post(
            "/custom-labels",
            json!({"name": "license-plates", "example_count": 250}),
        ),
    );
    send("22-unknown-route", ApiRequest::get("/admin"));
    out
}
