//! The mock cloud: device registry, detection API, ingestion stream,
//! function dispatch, notifications, metadata and blob storage, activity
//! queries and custom-label jobs, all behind one gateway.

mod custom_labels;
mod detection_api;
mod dispatch;
mod gateway;
pub mod http;
mod notify;
mod query;
mod store;
mod stream;

pub use custom_labels::{CustomLabelJob, CustomLabelRegistry, JobStatus};
pub use detection_api::DetectionService;
pub use dispatch::{
    Checkpoint, DispatchReport, Dispatcher, Handler, PersistMetadata, PublishNotification, DEFAULT_MAX_HANDLER_ATTEMPTS,
};
pub use gateway::{GatewayClient, ENDPOINTS};
pub use notify::{describe_detections, summarize, Notification, Notifier, Subscription, SubscriptionFilter};
pub use query::{answer_query, scenario_counts, QueryAnswer, QueryKind, QueryRequest, TimeRange, DAY_MS};
pub use store::{BlobRef, BlobStore, MetadataStore};
pub use stream::{IngestStream, StreamRecord};

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendProfile, FaceCollection, FaceStore, NetworkModel, ProfileRegistry};
use crate::device::{Credential, DeviceRecord, DeviceRegistry, SessionToken};
use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, FaceCategory, LogicalMs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkModel,
    #[serde(default = "default_attempts")]
    pub max_handler_attempts: u32,
    /// Profile behind the detection API; the default cloud profile if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection_profile: Option<BackendProfile>,
}

fn default_attempts() -> u32 {
    DEFAULT_MAX_HANDLER_ATTEMPTS
}

impl Default for CloudConfig {
    fn default() -> Self {
        CloudConfig {
            seed: 0,
            network: NetworkModel::default(),
            max_handler_attempts: DEFAULT_MAX_HANDLER_ATTEMPTS,
            detection_profile: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub sequence: u64,
    pub duplicate: bool,
}

/// Receiving end of edge forwarding.
pub trait Ingest: Send + Sync {
    fn ingest(&self, record: &AnalyticsRecord, session: &SessionToken) -> Result<IngestAck>;
}

/// Durable part of the cloud, as written by the CLI between runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CloudState {
    #[serde(default)]
    pub collections: Vec<FaceCollection>,
    #[serde(default)]
    pub records: Vec<AnalyticsRecord>,
    #[serde(default)]
    pub custom_label_jobs: Vec<CustomLabelJob>,
    #[serde(default)]
    pub clock_ms: LogicalMs,
}

impl CloudState {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub struct CloudService {
    config: CloudConfig,
    registry: DeviceRegistry,
    stream: IngestStream,
    store: Arc<MetadataStore>,
    blobs: BlobStore,
    notifier: Arc<Notifier>,
    faces: Arc<FaceStore>,
    detection: DetectionService,
    labels: CustomLabelRegistry,
    dispatcher: Mutex<Dispatcher>,
    clock: AtomicU64,
}

impl CloudService {
    pub fn new(config: CloudConfig) -> Result<Self> {
        let profile = match &config.detection_profile {
            Some(p) => p.clone(),
            None => ProfileRegistry::defaults().get("aws-saas")?.clone(),
        };
        let faces = Arc::new(FaceStore::new());
        let store = Arc::new(MetadataStore::new());
        let notifier = Arc::new(Notifier::new());
        Ok(CloudService {
            registry: DeviceRegistry::new(config.seed),
            stream: IngestStream::new(),
            blobs: BlobStore::new(),
            detection: DetectionService::new(profile, faces.clone(), config.seed)?,
            labels: CustomLabelRegistry::new(),
            dispatcher: Mutex::new(Dispatcher::builtin(
                store.clone(),
                notifier.clone(),
                config.max_handler_attempts,
            )),
            clock: AtomicU64::new(0),
            store,
            notifier,
            faces,
            config,
        })
    }

    pub fn with_state(config: CloudConfig, state: CloudState) -> Result<Self> {
        let svc = CloudService::new(config)?;
        for c in state.collections {
            for (identity, category) in c.entries {
                svc.faces.enroll(&c.collection_id, &identity, category)?;
            }
        }
        for r in &state.records {
            svc.store.put(r);
        }
        for j in state.custom_label_jobs {
            svc.labels.create(&j.name, j.example_count, j.created_at)?;
        }
        svc.advance_clock(state.clock_ms);
        Ok(svc)
    }

    pub fn state(&self) -> CloudState {
        CloudState {
            collections: self.faces.snapshot(),
            records: self.store.all(),
            custom_label_jobs: self.labels.jobs(),
            clock_ms: self.now(),
        }
    }

    pub fn config(&self) -> &CloudConfig {
        &self.config
    }

    /// Current logical time: the latest ingest or explicit advance.
    pub fn now(&self) -> LogicalMs {
        self.clock.load(Ordering::SeqCst)
    }

    pub fn advance_clock(&self, to: LogicalMs) -> LogicalMs {
        self.clock.fetch_max(to, Ordering::SeqCst).max(to)
    }

    pub fn register_device(
        &self,
        device_id: &DeviceId,
        attributes: BTreeMap<String, String>,
    ) -> Result<(DeviceRecord, Credential)> {
        self.registry.register(device_id, attributes, self.now())
    }

    pub fn authenticate(&self, device_id: &DeviceId, secret: &str) -> Result<SessionToken> {
        self.registry.authenticate(device_id, secret)
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    pub fn stream(&self) -> &IngestStream {
        &self.stream
    }

    pub fn store(&self) -> &MetadataStore {
        &self.store
    }

    pub fn blobs(&self) -> &BlobStore {
        &self.blobs
    }

    pub fn notifier(&self) -> &Notifier {
        &self.notifier
    }

    pub fn faces(&self) -> &Arc<FaceStore> {
        &self.faces
    }

    pub fn detection(&self) -> &DetectionService {
        &self.detection
    }

    pub fn custom_labels(&self) -> &CustomLabelRegistry {
        &self.labels
    }

    pub fn enroll_face(&self, collection_id: &str, identity: &str, category: FaceCategory) -> Result<()> {
        self.faces.enroll(collection_id, identity, category)
    }

    pub fn subscribe(&self, subscriber_id: &str, filter: SubscriptionFilter) -> Result<()> {
        self.notifier.subscribe(subscriber_id, filter)
    }

    /// Runs one dispatch pass over newly ingested records.
    pub fn dispatch_pass(&self) -> DispatchReport {
        self.dispatcher.lock().pass(&self.stream)
    }

    /// Dispatches until the consumer has caught up.
    pub fn drain(&self) -> DispatchReport {
        self.dispatcher.lock().drain(&self.stream)
    }

    pub fn with_dispatcher<R>(&self, f: impl FnOnce(&mut Dispatcher) -> R) -> R {
        f(&mut self.dispatcher.lock())
    }

    pub fn answer_query(&self, q: &QueryRequest) -> Result<QueryAnswer> {
        answer_query(q, &self.store, self.now())
    }
}

impl Ingest for CloudService {
    /// Appends to the stream; duplicates are appended too, flagged for the
    /// consumer. The logical ingest time is the detection time plus one
    /// network traversal, never earlier than anything ingested before.
    fn ingest(&self, record: &AnalyticsRecord, session: &SessionToken) -> Result<IngestAck> {
        let owner = self.registry.session_device(session)?;
        if owner != record.device_id {
            return Err(Error::AuthFailed(format!(
                "session belongs to {owner}, record to {}",
                record.device_id
            )));
        }
        record.validate()?;
        let delay = self
            .config
            .network
            .one_way(self.config.seed, &[record.event_id.as_str(), "ingest"]);
        let at = self.advance_clock(record.detected_at + delay);
        let (sequence, duplicate) = self.stream.append(record.clone(), at);
        Ok(IngestAck { sequence, duplicate })
    }
}

impl<T: Ingest + ?Sized> Ingest for Arc<T> {
    fn ingest(&self, record: &AnalyticsRecord, session: &SessionToken) -> Result<IngestAck> {
        (**self).ingest(record, session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventId;

    fn record(device: &DeviceId, seq: u64) -> AnalyticsRecord {
        AnalyticsRecord {
            event_id: EventId::new(device, seq),
            device_id: device.clone(),
            frame_id: format!("f-{seq}"),
            detections: vec![],
            backend_id: "aws-saas".into(),
            captured_at: seq * 1000,
            detected_at: seq * 1000 + 100,
            threshold_used: 90.0,
        }
    }

    #[test]
    fn ingest_sequences_and_duplicates() {
        let cloud = CloudService::new(CloudConfig::default()).unwrap();
        let door = DeviceId::new("door-1").unwrap();
        let (_, cred) = cloud.register_device(&door, BTreeMap::new()).unwrap();
        let session = cloud.authenticate(&door, &cred.secret).unwrap();

        let a = cloud.ingest(&record(&door, 0), &session).unwrap();
        assert_eq!(
            a,
            IngestAck {
                sequence: 0,
                duplicate: false
            }
        );
        let b = cloud.ingest(&record(&door, 1), &session).unwrap();
        assert_eq!(b.sequence, 1);
        let c = cloud.ingest(&record(&door, 1), &session).unwrap();
        assert_eq!(
            c,
            IngestAck {
                sequence: 2,
                duplicate: true
            }
        );

        let bad = SessionToken("nope".into());
        assert!(matches!(
            cloud.ingest(&record(&door, 2), &bad),
            Err(Error::AuthFailed(_))
        ));

        let other = DeviceId::new("door-2").unwrap();
        assert!(matches!(
            cloud.ingest(&record(&other, 0), &session),
            Err(Error::AuthFailed(_))
        ));

        cloud.drain();
        assert_eq!(cloud.store().len(), 2);
    }

    #[test]
    fn ingest_time_is_monotone() {
        let cloud = CloudService::new(CloudConfig::default()).unwrap();
        let door = DeviceId::new("door-1").unwrap();
        let (_, cred) = cloud.register_device(&door, BTreeMap::new()).unwrap();
        let s = cloud.authenticate(&door, &cred.secret).unwrap();
        for i in 0..20 {
            cloud.ingest(&record(&door, i), &s).unwrap();
        }
        let times: Vec<_> = cloud.stream().snapshot().iter().map(|r| r.ingested_at).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        for r in cloud.stream().snapshot() {
            assert!(r.ingested_at >= r.payload.detected_at + 30);
        }
    }

    #[test]
    fn state_round_trip() {
        let cloud = CloudService::new(CloudConfig::default()).unwrap();
        cloud.enroll_face("household", "alice", FaceCategory::Family).unwrap();
        cloud.custom_labels().create("plates", 10, 0).unwrap();
        let door = DeviceId::new("door-1").unwrap();
        let (_, cred) = cloud.register_device(&door, BTreeMap::new()).unwrap();
        let s = cloud.authenticate(&door, &cred.secret).unwrap();
        cloud.ingest(&record(&door, 0), &s).unwrap();
        cloud.drain();
        let state = cloud.state();
        let back = CloudService::with_state(CloudConfig::default(), state.clone()).unwrap();
        assert_eq!(back.state(), state);
    }
}
