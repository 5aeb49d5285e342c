//! The single entry point: every externally reachable read or write is one
//! of [`ENDPOINTS`], routed here.

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::device::{Credential, DeviceRecord, SessionToken};
use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DetectionApi, DeviceId, FaceCategory};
use crate::protocol::{ApiRequest, ApiResponse, Method, Transport, SESSION_HEADER};

use super::{BlobRef, CloudService, CustomLabelJob, Ingest, IngestAck, QueryAnswer, QueryRequest};
use crate::backends::DEFAULT_COLLECTION;

pub const ENDPOINTS: [(Method, &str); 13] = [
    (Method::POST, "/devices/register"),
    (Method::POST, "/devices/auth"),
    (Method::POST, "/ingest"),
    (Method::GET, "/activities"),
    (Method::POST, "/query"),
    (Method::POST, "/faces/enroll"),
    (Method::POST, "/detect/faces"),
    (Method::POST, "/detect/moderation"),
    (Method::POST, "/detect/text"),
    (Method::POST, "/detect/labels"),
    (Method::POST, "/blobs"),
    (Method::GET, "/blobs/{ref}"),
    (Method::POST, "/custom-labels"),
];

#[derive(Deserialize)]
struct RegisterBody {
    device_id: DeviceId,
    #[serde(default)]
    attributes: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct AuthBody {
    device_id: DeviceId,
    secret: String,
}

#[derive(Deserialize)]
struct EnrollBody {
    #[serde(default)]
    collection_id: Option<String>,
    identity: String,
    category: FaceCategory,
}

#[derive(Deserialize)]
struct BlobBody {
    data_base64: String,
}

#[derive(Deserialize)]
struct CustomLabelBody {
    name: String,
    example_count: u64,
}

impl CloudService {
    /// Routes one request. Failures become error envelopes.
    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        match self.route(req) {
            Ok(data) => ApiResponse::ok(data),
            Err(e) => ApiResponse::from_error(&e),
        }
    }

    fn route(&self, req: &ApiRequest) -> Result<Value> {
        use Method::*;
        let path = req.path.as_str();
        match (req.method, path) {
            (POST, "/devices/register") => {
                let b: RegisterBody = req.json()?;
                let (record, credential) = self.register_device(&b.device_id, b.attributes)?;
                Ok(json!({ "record": record, "credential": credential }))
            }
            (POST, "/devices/auth") => {
                let b: AuthBody = req.json()?;
                let token = self.authenticate(&b.device_id, &b.secret)?;
                Ok(json!({ "session_token": token }))
            }
            (POST, "/ingest") => {
                let token = req
                    .header(SESSION_HEADER)
                    .ok_or_else(|| Error::AuthFailed(format!("missing {SESSION_HEADER} header")))?;
                let record: AnalyticsRecord = req.json()?;
                let ack = self.ingest(&record, &SessionToken(token.to_string()))?;
                // ingestion triggers the handlers
                self.dispatch_pass();
                Ok(serde_json::to_value(ack)?)
            }
            (GET, "/activities") => {
                let device = DeviceId::new(
                    req.query
                        .get("device")
                        .ok_or_else(|| Error::validation("missing query parameter device"))?
                        .clone(),
                )?;
                let num = |key: &str, default: u64| -> Result<u64> {
                    match req.query.get(key).map(String::as_str) {
                        None | Some("") => Ok(default),
                        Some(v) => v
                            .parse()
                            .map_err(|_| Error::validation(format!("{key} must be an integer"))),
                    }
                };
                let records = self
                    .store()
                    .get_activities(&device, num("from", 0)?, num("to", u64::MAX)?)?;
                Ok(json!({ "records": records }))
            }
            (POST, "/query") => {
                let q: QueryRequest = req.json()?;
                Ok(serde_json::to_value(self.answer_query(&q)?)?)
            }
            (POST, "/faces/enroll") => {
                let b: EnrollBody = req.json()?;
                let coll = b.collection_id.unwrap_or_else(|| DEFAULT_COLLECTION.to_string());
                self.enroll_face(&coll, &b.identity, b.category)?;
                Ok(json!({ "collection_id": coll, "identity": b.identity, "category": b.category }))
            }
            (POST, p) if DetectionApi::from_path(p).is_some() => {
                let api = DetectionApi::from_path(p).expect("checked");
                let body = req
                    .body
                    .clone()
                    .ok_or_else(|| Error::Protocol(format!("{p} requires a JSON body")))?;
                self.detection().handle(api, body)
            }
            (POST, "/blobs") => {
                let b: BlobBody = req.json()?;
                let bytes = BASE64
                    .decode(b.data_base64.as_bytes())
                    .map_err(|e| Error::Protocol(format!("data_base64: {e}")))?;
                Ok(json!({ "ref": self.blobs().put(&bytes) }))
            }
            (GET, p) if p.starts_with("/blobs/") => {
                let r = BlobRef(p["/blobs/".len()..].to_string());
                let bytes = self.blobs().get(&r)?;
                Ok(json!({ "ref": r, "data_base64": BASE64.encode(bytes) }))
            }
            (POST, "/custom-labels") => {
                let b: CustomLabelBody = req.json()?;
                Ok(serde_json::to_value(self.custom_labels().create(
                    &b.name,
                    b.example_count,
                    self.now(),
                )?)?)
            }
            (m, p) => Err(Error::NotFound(format!("no route for {m:?} {p}"))),
        }
    }
}

impl Transport for CloudService {
    fn call(&self, request: &ApiRequest) -> Result<ApiResponse> {
        Ok(self.handle(request))
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn call(&self, request: &ApiRequest) -> Result<ApiResponse> {
        (**self).call(request)
    }
}

/// Typed client over any transport.
pub struct GatewayClient<T> {
    transport: T,
}

impl<T: Transport> GatewayClient<T> {
    pub fn new(transport: T) -> Self {
        GatewayClient { transport }
    }

    fn send<R: serde::de::DeserializeOwned>(&self, req: ApiRequest) -> Result<R> {
        let data = self.transport.call(&req)?.into_data()?;
        serde_json::from_value(data).map_err(|e| Error::Protocol(format!("unexpected response shape: {e}")))
    }

    pub fn register(
        &self,
        device: &DeviceId,
        attributes: BTreeMap<String, String>,
    ) -> Result<(DeviceRecord, Credential)> {
        #[derive(Deserialize)]
        struct R {
            record: DeviceRecord,
            credential: Credential,
        }
        let r: R = self.send(ApiRequest::post(
            "/devices/register",
            json!({ "device_id": device, "attributes": attributes }),
        ))?;
        Ok((r.record, r.credential))
    }

    pub fn authenticate(&self, device: &DeviceId, secret: &str) -> Result<SessionToken> {
        #[derive(Deserialize)]
        struct R {
            session_token: SessionToken,
        }
        let r: R = self.send(ApiRequest::post(
            "/devices/auth",
            json!({ "device_id": device, "secret": secret }),
        ))?;
        Ok(r.session_token)
    }

    pub fn activities(&self, device: &DeviceId, from: u64, to: u64) -> Result<Vec<AnalyticsRecord>> {
        #[derive(Deserialize)]
        struct R {
            records: Vec<AnalyticsRecord>,
        }
        let r: R = self.send(
            ApiRequest::get("/activities")
                .with_query("device", device)
                .with_query("from", from)
                .with_query("to", to),
        )?;
        Ok(r.records)
    }

    pub fn query(&self, q: &QueryRequest) -> Result<QueryAnswer> {
        self.send(ApiRequest::post("/query", serde_json::to_value(q)?))
    }

    pub fn enroll(&self, collection_id: &str, identity: &str, category: FaceCategory) -> Result<()> {
        let _: Value = self.send(ApiRequest::post(
            "/faces/enroll",
            json!({ "collection_id": collection_id, "identity": identity, "category": category }),
        ))?;
        Ok(())
    }

    pub fn put_blob(&self, bytes: &[u8]) -> Result<BlobRef> {
        #[derive(Deserialize)]
        struct R {
            r#ref: BlobRef,
        }
        let r: R = self.send(ApiRequest::post(
            "/blobs",
            json!({ "data_base64": BASE64.encode(bytes) }),
        ))?;
        Ok(r.r#ref)
    }

    pub fn get_blob(&self, r: &BlobRef) -> Result<Vec<u8>> {
        #[derive(Deserialize)]
        struct R {
            data_base64: String,
        }
        let r: R = self.send(ApiRequest::get(format!("/blobs/{}", r.0)))?;
        BASE64
            .decode(r.data_base64.as_bytes())
            .map_err(|e| Error::Protocol(format!("data_base64: {e}")))
    }

    pub fn create_custom_label(&self, name: &str, example_count: u64) -> Result<CustomLabelJob> {
        self.send(ApiRequest::post(
            "/custom-labels",
            json!({ "name": name, "example_count": example_count }),
        ))
    }
}

impl<T: Transport> Ingest for GatewayClient<T> {
    fn ingest(&self, record: &AnalyticsRecord, session: &SessionToken) -> Result<IngestAck> {
        self.send(
            ApiRequest::post("/ingest", serde_json::to_value(record)?).with_header(SESSION_HEADER, session.as_str()),
        )
    }
}
