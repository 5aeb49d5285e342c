//! End-to-end runs: device scripts → edge → cloud, scored against the
//! manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backends::{
    BackendCategory, Detector, NetworkModel, ProfileRegistry, RemoteDetector, SimulatedDetector, DEFAULT_COLLECTION,
};
use crate::cloud::{CloudConfig, CloudService, CloudState, Ingest, SubscriptionFilter};
use crate::device::{run_motion_script, Dataset, MotionScript, SessionToken, DEFAULT_DEBOUNCE_MS};
use crate::edge::{
    analyze, run_pipeline, EdgeConfig, FlakyIngest, Forwarder, FrameSampler, PipelineOutput, RetryPolicy,
    SamplingPolicy,
};
use crate::error::{Error, Result};
use crate::exec;
use crate::model::{
    check_fraction, AnalyticsRecord, DeviceId, EventIdIssuer, FaceCategory, FrameSample, MotionEvent, ScenarioKind,
    DEFAULT_THRESHOLD,
};
use crate::protocol::Transport;

use super::latency::{latency_stats, LatencySample, LatencyStats};
use super::metrics::{classify_outcome, compute_metrics, ConfusionCounts, Metrics, MetricsReport, Outcome};

pub const DEFAULT_EVENT_SPACING_MS: u64 = 2000;
const MAX_REDRIVE_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection_id: Option<String>,
    pub identity: String,
    pub category: FaceCategory,
}

/// On-disk experiment description. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub backend_id: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub network: NetworkModel,
    /// JSON array of backend profiles; the built-in profiles if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<PathBuf>,
    /// Motion scripts; without them every device triggers once per frame,
    /// `event_spacing_ms` apart, in manifest order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scripts: Vec<PathBuf>,
    #[serde(default = "default_spacing")]
    pub event_spacing_ms: u64,
    #[serde(default = "default_debounce")]
    pub debounce_ms: u64,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enrollments: Vec<Enrollment>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subscribers: Vec<String>,
    #[serde(default)]
    pub ingest_failure_rate: f64,
    /// Where to write the partial trace if the run aborts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dump: Option<PathBuf>,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_spacing() -> u64 {
    DEFAULT_EVENT_SPACING_MS
}
fn default_debounce() -> u64 {
    DEFAULT_DEBOUNCE_MS
}

impl ExperimentConfig {
    pub fn new(dataset: impl Into<PathBuf>, backend_id: impl Into<String>) -> Self {
        ExperimentConfig {
            dataset: dataset.into(),
            backend_id: backend_id.into(),
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            network: NetworkModel::default(),
            profiles: None,
            scripts: Vec::new(),
            event_spacing_ms: DEFAULT_EVENT_SPACING_MS,
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            sampling: SamplingPolicy::default(),
            retry: RetryPolicy::default(),
            enrollments: Vec::new(),
            subscribers: Vec::new(),
            ingest_failure_rate: 0.0,
            trace_dump: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset);
        cfg.profiles.as_mut().map(resolve);
        cfg.scripts.iter_mut().for_each(resolve);
        cfg.trace_dump.as_mut().map(resolve);
        Ok(cfg)
    }

    /// Reads every referenced file.
    pub fn into_experiment(self) -> Result<Experiment> {
        let profiles = match &self.profiles {
            Some(p) => ProfileRegistry::load(p)?,
            None => ProfileRegistry::defaults(),
        };
        let dataset = Dataset::load(&self.dataset)?;
        let scripts = if self.scripts.is_empty() {
            None
        } else {
            Some(
                self.scripts
                    .iter()
                    .map(|p| MotionScript::load(p))
                    .collect::<Result<Vec<_>>>()?,
            )
        };
        Ok(Experiment {
            backend_id: self.backend_id,
            threshold: self.threshold,
            seed: self.seed,
            network: self.network,
            profiles,
            dataset,
            scripts,
            event_spacing_ms: self.event_spacing_ms,
            debounce_ms: self.debounce_ms,
            sampling: self.sampling,
            retry: self.retry,
            enrollments: self.enrollments,
            subscribers: self.subscribers,
            ingest_failure_rate: self.ingest_failure_rate,
            trace_dump: self.trace_dump,
        })
    }
}

type EventStreams = Vec<Vec<(MotionEvent, FrameSample)>>;

/// A fully loaded experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub backend_id: String,
    pub threshold: f64,
    pub seed: u64,
    pub network: NetworkModel,
    pub profiles: ProfileRegistry,
    pub dataset: Dataset,
    pub scripts: Option<Vec<MotionScript>>,
    pub event_spacing_ms: u64,
    pub debounce_ms: u64,
    pub sampling: SamplingPolicy,
    pub retry: RetryPolicy,
    pub enrollments: Vec<Enrollment>,
    pub subscribers: Vec<String>,
    pub ingest_failure_rate: f64,
    pub trace_dump: Option<PathBuf>,
}

impl Experiment {
    pub fn new(dataset: Dataset, backend_id: impl Into<String>) -> Self {
        Experiment {
            backend_id: backend_id.into(),
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            network: NetworkModel::default(),
            profiles: ProfileRegistry::defaults(),
            dataset,
            scripts: None,
            event_spacing_ms: DEFAULT_EVENT_SPACING_MS,
            debounce_ms: DEFAULT_DEBOUNCE_MS,
            sampling: SamplingPolicy::default(),
            retry: RetryPolicy::default(),
            enrollments: Vec::new(),
            subscribers: Vec::new(),
            ingest_failure_rate: 0.0,
            trace_dump: None,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn edge_config(&self) -> EdgeConfig {
        EdgeConfig {
            retry: self.retry,
            sampling: self.sampling,
            ..EdgeConfig::new(&self.backend_id, self.threshold)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.edge_config().validate(&self.profiles)?;
        check_fraction("ingest_failure_rate", self.ingest_failure_rate)?;
        if self.dataset.is_empty() {
            return Err(Error::Dataset("dataset has no frames".into()));
        }
        Ok(())
    }

    /// Builds the cloud this experiment talks to, with faces enrolled and
    /// subscribers attached.
    pub fn build_cloud(&self) -> Result<Arc<CloudService>> {
        self.build_cloud_with_state(CloudState::default())
    }

    /// Like [`Experiment::build_cloud`], starting from previously saved state.
    pub fn build_cloud_with_state(&self, state: CloudState) -> Result<Arc<CloudService>> {
        let profile = self.profiles.get(&self.backend_id)?;
        let config = CloudConfig {
            seed: self.seed,
            network: self.network,
            detection_profile: profile.category.is_remote().then(|| profile.clone()),
            ..CloudConfig::default()
        };
        let cloud = CloudService::with_state(config, state)?;
        self.prepare_cloud(&cloud)?;
        Ok(Arc::new(cloud))
    }

    fn prepare_cloud(&self, cloud: &CloudService) -> Result<()> {
        cloud.faces().create_collection(DEFAULT_COLLECTION);
        for e in &self.enrollments {
            let coll = e.collection_id.as_deref().unwrap_or(DEFAULT_COLLECTION);
            cloud.enroll_face(coll, &e.identity, e.category)?;
        }
        for s in &self.subscribers {
            if cloud.notifier().subscription(s).is_none() {
                cloud.subscribe(s, SubscriptionFilter::default())?;
            }
        }
        Ok(())
    }

    pub fn detector(&self, cloud: &Arc<CloudService>) -> Result<Box<dyn Detector>> {
        let profile = self.profiles.get(&self.backend_id)?.clone();
        Ok(match profile.category {
            BackendCategory::CloudSaas => {
                let transport: Arc<dyn Transport> = cloud.clone();
                Box::new(RemoteDetector::new(profile, transport, self.network, self.seed))
            }
            _ => Box::new(
                SimulatedDetector::new(profile, self.seed).with_faces(cloud.faces().clone(), DEFAULT_COLLECTION),
            ),
        })
    }

    /// Registers and authenticates every device, then replays the motion
    /// scripts. Returns per-device event streams in device order.
    fn devices_and_events(&self, cloud: &CloudService) -> Result<(BTreeMap<DeviceId, SessionToken>, EventStreams)> {
        let scripts: Vec<MotionScript> = match &self.scripts {
            Some(s) => s.clone(),
            None => self
                .dataset
                .devices()
                .iter()
                .map(|d| MotionScript::evenly_spaced(&self.dataset, d, self.event_spacing_ms, self.debounce_ms))
                .collect(),
        };
        let devices: BTreeSet<DeviceId> = scripts.iter().map(|s| s.device_id.clone()).collect();
        if devices.len() != scripts.len() {
            return Err(Error::validation("more than one motion script for a device"));
        }
        let mut sessions = BTreeMap::new();
        for d in &devices {
            let attrs = BTreeMap::from([("kind".to_string(), "doorbell".to_string())]);
            let (_, cred) = cloud.register_device(d, attrs)?;
            sessions.insert(d.clone(), cloud.authenticate(d, &cred.secret)?);
        }
        let mut issuer = EventIdIssuer::new();
        let mut streams = Vec::new();
        let mut ordered = scripts;
        ordered.sort_by(|a, b| a.device_id.cmp(&b.device_id));
        for s in &ordered {
            streams.push(run_motion_script(s, &self.dataset, &mut issuer)?);
        }
        Ok((sessions, streams))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_id: String,
    pub device_id: DeviceId,
    pub scenario: ScenarioKind,
    pub truth: BTreeSet<String>,
    pub predicted: BTreeSet<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub backend_id: String,
    pub category: BackendCategory,
    pub memory_mb: f64,
    pub cpu_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryStats {
    pub acks: u64,
    pub retries: u64,
    pub duplicates_ingested: u64,
    pub dead_letter_rounds: u64,
    pub lost_requests: u64,
    pub lost_acks: u64,
    pub stored_records: u64,
    pub notifications: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub counts: ConfusionCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub backend_id: String,
    pub category: BackendCategory,
    pub threshold: f64,
    pub seed: u64,
    pub dataset_digest: String,
    pub frames: usize,
    pub sampled: usize,
    pub suppressed: usize,
    pub scenarios: Vec<MetricsReport>,
    pub overall: OverallMetrics,
    pub latency: LatencyStats,
    pub resources: ResourceRow,
    pub delivery: DeliveryStats,
    pub results: Vec<FrameResult>,
}

impl ExperimentReport {
    pub fn scenario(&self, kind: ScenarioKind) -> Option<&MetricsReport> {
        self.scenarios.iter().find(|m| m.scenario == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub fn dataset_digest(dataset: &Dataset) -> Result<String> {
    Ok(hex::encode(Sha256::digest(dataset.to_ndjson()?.as_bytes())))
}

/// Scores one frame. Every label in the truth or the prediction is a target
/// and yields one outcome; a frame with neither counts as one true negative.
pub fn frame_outcomes(truth: &BTreeSet<String>, predicted: &BTreeSet<String>) -> Vec<Outcome> {
    let targets: BTreeSet<&String> = truth.union(predicted).collect();
    if targets.is_empty() {
        return vec![Outcome::TN];
    }
    targets
        .into_iter()
        .map(|t| classify_outcome(truth, predicted, t))
        .collect()
}

/// Per-scenario counts over frame results, in [`ScenarioKind::ALL`] order,
/// skipping scenarios with no frames.
pub fn tally(results: &[FrameResult]) -> BTreeMap<ScenarioKind, ConfusionCounts> {
    let mut by_scenario: BTreeMap<ScenarioKind, ConfusionCounts> = BTreeMap::new();
    for r in results {
        let counts = by_scenario.entry(r.scenario).or_default();
        for o in frame_outcomes(&r.truth, &r.predicted) {
            counts.add(o);
        }
    }
    by_scenario
}

fn abort(exp: &Experiment, reason: String, partial: &[AnalyticsRecord]) -> Error {
    let mut dumped = None;
    if let Some(path) = &exp.trace_dump {
        let body = serde_json::json!({ "reason": reason, "records": partial });
        match serde_json::to_string_pretty(&body).map(|t| std::fs::write(path, t + "\n")) {
            Ok(Ok(())) => dumped = Some(path.clone()),
            _ => log::warn!("could not write trace dump to {}", path.display()),
        }
    }
    Error::Experiment {
        reason,
        trace_dump: dumped,
    }
}

/// Runs `exp` end to end on a fresh in-process cloud.
///
/// Detection runs as a batch over all sampled frames (data-parallel with the
/// `parallel` feature); forwarding is sequential in capture order so ingest
/// order, and with it the whole report, is a function of the seed.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentReport> {
    exp.validate()?;
    let profile = exp.profiles.get(&exp.backend_id)?.clone();
    let cloud = exp.build_cloud()?;
    let detector = exp.detector(&cloud)?;
    let edge = exp.edge_config();
    let (sessions, streams) = exp.devices_and_events(&cloud)?;

    let mut sampler = FrameSampler::new(exp.sampling)?;
    let mut sampled = Vec::new();
    let mut suppressed = 0;
    for (event, frame) in streams.into_iter().flatten() {
        match sampler.sample(&event, frame)? {
            Some(f) => sampled.push((event, f)),
            None => suppressed += 1,
        }
    }

    let analyzed = exec::map_batch(&sampled, |(ev, fr)| analyze(ev, fr, &edge, detector.as_ref()));
    let mut records = Vec::with_capacity(analyzed.len());
    for r in analyzed {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => return Err(abort(exp, e.to_string(), &records)),
        }
    }
    records.sort_by(|a, b| {
        (a.captured_at, &a.device_id, a.event_id.sequence()).cmp(&(b.captured_at, &b.device_id, b.event_id.sequence()))
    });

    let flaky = FlakyIngest::new(cloud.clone(), exp.ingest_failure_rate, exp.seed)?;
    let ingest: &dyn Ingest = &flaky;
    let mut forwarder = Forwarder::new(exp.retry)?;
    let mut delivery = DeliveryStats::default();
    let count_ack = |ack: &crate::edge::Ack, d: &mut DeliveryStats| {
        d.acks += 1;
        d.retries += u64::from(ack.attempts - 1);
    };
    for rec in &records {
        match forwarder.forward(rec, &sessions[&rec.device_id], ingest) {
            Ok(ack) => count_ack(&ack, &mut delivery),
            Err(Error::DeliveryFailed { .. }) => {}
            Err(e) => return Err(abort(exp, e.to_string(), &records)),
        }
    }
    while !forwarder.dead_letters().is_empty() {
        if delivery.dead_letter_rounds as usize == MAX_REDRIVE_ROUNDS {
            let n = forwarder.dead_letters().len();
            return Err(abort(exp, format!("{n} records undeliverable"), &records));
        }
        delivery.dead_letter_rounds += 1;
        for ack in forwarder.redrive(|d| sessions.get(d).cloned(), ingest) {
            count_ack(&ack, &mut delivery);
        }
    }
    let report = cloud.drain();
    if report.dead_lettered > 0 || report.stalled_at.is_some() {
        return Err(abort(exp, format!("dispatch did not complete: {report:?}"), &records));
    }
    delivery.lost_requests = flaky.lost_requests();
    delivery.lost_acks = flaky.lost_acks();
    delivery.duplicates_ingested = cloud.stream().snapshot().iter().filter(|r| r.duplicate).count() as u64;
    delivery.stored_records = cloud.store().len() as u64;
    delivery.notifications = cloud.notifier().total_deliveries() as u64;

    // score what the cloud stored, not what the edge produced
    let stored: BTreeMap<_, _> = cloud
        .store()
        .all()
        .into_iter()
        .map(|r| (r.event_id.clone(), r))
        .collect();
    let mut results = Vec::with_capacity(sampled.len());
    let mut trace = Vec::with_capacity(sampled.len());
    for (event, frame) in &sampled {
        let rec = stored
            .get(&event.event_id)
            .ok_or_else(|| abort(exp, format!("no stored record for {}", event.event_id), &records))?;
        trace.push(LatencySample {
            request_at: rec.captured_at,
            response_at: rec.detected_at,
        });
        results.push(FrameResult {
            frame_id: frame.frame_id.clone(),
            device_id: frame.device_id.clone(),
            scenario: frame.scenario,
            truth: frame.truth_names(),
            predicted: rec.predicted_names(),
            latency_ms: rec.detected_at - rec.captured_at,
        });
    }
    if results.is_empty() {
        return Err(abort(exp, "every frame was suppressed by sampling".into(), &records));
    }

    let per_scenario = tally(&results);
    let mut overall = ConfusionCounts::default();
    let mut scenarios = Vec::new();
    for (kind, counts) in &per_scenario {
        overall.merge(counts);
        scenarios.push(MetricsReport::new(&exp.backend_id, *kind, *counts)?);
    }

    Ok(ExperimentReport {
        backend_id: exp.backend_id.clone(),
        category: profile.category,
        threshold: exp.threshold,
        seed: exp.seed,
        dataset_digest: dataset_digest(&exp.dataset)?,
        frames: exp.dataset.len(),
        sampled: sampled.len(),
        suppressed,
        scenarios,
        overall: OverallMetrics {
            counts: overall,
            metrics: compute_metrics(&overall)?,
        },
        latency: latency_stats(&exp.backend_id, &trace)?,
        resources: ResourceRow {
            backend_id: profile.backend_id.clone(),
            category: profile.category,
            memory_mb: profile.memory_mb,
            cpu_pct: profile.cpu_pct,
        },
        delivery,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub backend_id: String,
    pub events: usize,
    pub records: usize,
    pub acks: usize,
    pub suppressed: usize,
    pub detection_failures: Vec<(String, String)>,
    pub dead_letters: usize,
    pub stored_records: usize,
    pub notifications: usize,
}

/// Runs the concurrent edge pipeline against `cloud` (which may already
/// hold state) and drains its dispatcher. The edge's dead letters are
/// returned alongside the summary.
pub fn simulate(exp: &Experiment, cloud: &Arc<CloudService>) -> Result<(SimulationSummary, PipelineOutput)> {
    exp.validate()?;
    exp.prepare_cloud(cloud)?;
    let detector = exp.detector(cloud)?;
    let (sessions, streams) = exp.devices_and_events(cloud)?;
    let events = streams.iter().map(Vec::len).sum();
    let flaky = FlakyIngest::new(cloud.clone(), exp.ingest_failure_rate, exp.seed)?;
    let out = run_pipeline(streams, &exp.edge_config(), detector.as_ref(), &flaky, &sessions)?;
    cloud.drain();
    let summary = SimulationSummary {
        backend_id: exp.backend_id.clone(),
        events,
        records: out.records.len(),
        acks: out.acks.len(),
        suppressed: out.suppressed,
        detection_failures: out.detection_failures.clone(),
        dead_letters: out.dead_letters.len(),
        stored_records: cloud.store().len(),
        notifications: cloud.notifier().total_deliveries(),
    };
    Ok((summary, out))
}
