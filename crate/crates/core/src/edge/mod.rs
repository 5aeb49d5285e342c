//! The edge layer: frame sampling, detection, thresholding, packaging and
//! forwarding of analytics records.

mod forward;
mod pipeline;

pub use forward::{Ack, DeadLetter, FlakyIngest, Forwarder, RetryPolicy};
pub use pipeline::{run_pipeline, PipelineOutput};

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{Detector, ProfileRegistry};
use crate::error::{Error, Result};
use crate::model::{
    apply_confidence_threshold, check_percent, AnalyticsRecord, DetectionApi, DeviceId, EventId, FrameSample,
    LogicalMs, MotionEvent, ScenarioKind, DEFAULT_THRESHOLD,
};

pub const DEFAULT_QUEUE_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    #[serde(default = "one")]
    pub max_frames_per_event: u32,
    #[serde(default)]
    pub min_interval_ms: u64,
}

fn one() -> u32 {
    1
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        SamplingPolicy {
            max_frames_per_event: 1,
            min_interval_ms: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_frames_per_event == 0 {
            return Err(Error::validation("max_frames_per_event must be at least 1"));
        }
        Ok(())
    }
}

/// Stateful side of [`SamplingPolicy`]: remembers, per device, when the last
/// frame went through and how many frames the current event has used.
#[derive(Debug, Clone, Default)]
pub struct FrameSampler {
    policy: SamplingPolicy,
    last_passed: HashMap<DeviceId, LogicalMs>,
    per_event: HashMap<DeviceId, (EventId, u32)>,
}

impl FrameSampler {
    pub fn new(policy: SamplingPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(FrameSampler {
            policy,
            ..Default::default()
        })
    }

    /// Passes `frame` through unless the policy suppresses it.
    pub fn sample(&mut self, event: &MotionEvent, frame: FrameSample) -> Result<Option<FrameSample>> {
        if frame.device_id != event.device_id {
            return Err(Error::Routing(format!(
                "frame {} from {} offered for an event of {}",
                frame.frame_id, frame.device_id, event.device_id
            )));
        }
        let device = &event.device_id;
        if let Some(&prev) = self.last_passed.get(device) {
            if frame.captured_at.saturating_sub(prev) < self.policy.min_interval_ms {
                return Ok(None);
            }
        }
        let used = match self.per_event.get(device) {
            Some((id, n)) if *id == event.event_id => *n,
            _ => 0,
        };
        if used >= self.policy.max_frames_per_event {
            return Ok(None);
        }
        self.per_event
            .insert(device.clone(), (event.event_id.clone(), used + 1));
        self.last_passed.insert(device.clone(), frame.captured_at);
        Ok(Some(frame))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConfig {
    pub backend_id: String,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub sampling: SamplingPolicy,
    #[serde(default = "default_routing")]
    pub scenario_routing: BTreeMap<ScenarioKind, DetectionApi>,
    #[serde(default = "default_capacity")]
    pub queue_capacity: usize,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_capacity() -> usize {
    DEFAULT_QUEUE_CAPACITY
}

/// Each scenario goes to the API operation that serves it.
pub fn default_routing() -> BTreeMap<ScenarioKind, DetectionApi> {
    ScenarioKind::ALL.iter().map(|&k| (k, k.api_operation())).collect()
}

impl EdgeConfig {
    pub fn new(backend_id: impl Into<String>, threshold: f64) -> Self {
        EdgeConfig {
            backend_id: backend_id.into(),
            threshold,
            retry: RetryPolicy::default(),
            sampling: SamplingPolicy::default(),
            scenario_routing: default_routing(),
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks the config on its own and against the registered backends.
    pub fn validate(&self, profiles: &ProfileRegistry) -> Result<()> {
        profiles
            .get(&self.backend_id)
            .map_err(|_| Error::validation(format!("backend {} is not registered", self.backend_id)))?;
        check_percent("threshold", self.threshold)?;
        self.retry.validate()?;
        self.sampling.validate()?;
        if let Some(missing) = ScenarioKind::ALL
            .iter()
            .find(|k| !self.scenario_routing.contains_key(k))
        {
            return Err(Error::validation(format!("scenario_routing does not cover {missing}")));
        }
        if self.queue_capacity == 0 {
            return Err(Error::validation("queue_capacity must be at least 1"));
        }
        Ok(())
    }
}

/// Runs one sampled frame through the backend and packages the result.
/// Latency is added on the logical clock: `detected_at = captured_at +
/// inference latency`.
pub fn analyze(
    event: &MotionEvent,
    frame: &FrameSample,
    config: &EdgeConfig,
    detector: &dyn Detector,
) -> Result<AnalyticsRecord> {
    let backend_id = &detector.descriptor().backend_id;
    if *backend_id != config.backend_id {
        return Err(Error::validation(format!(
            "edge configured for {}, detector is {backend_id}",
            config.backend_id
        )));
    }
    let api = config
        .scenario_routing
        .get(&frame.scenario)
        .ok_or_else(|| Error::Routing(format!("no route for {}", frame.scenario)))?;
    if *api != frame.scenario.api_operation() {
        return Err(Error::Routing(format!(
            "{} frames cannot be served by {}",
            frame.scenario,
            api.path()
        )));
    }
    let inference = detector.detect(frame, frame.scenario).map_err(|e| match e {
        Error::DetectionFailed { .. } => e,
        Error::Unavailable(reason) | Error::Protocol(reason) => Error::DetectionFailed {
            frame_id: frame.frame_id.clone(),
            reason,
        },
        other => other,
    })?;
    Ok(AnalyticsRecord {
        event_id: event.event_id.clone(),
        device_id: event.device_id.clone(),
        frame_id: frame.frame_id.clone(),
        detections: apply_confidence_threshold(&inference.detections, config.threshold)?,
        backend_id: backend_id.clone(),
        captured_at: frame.captured_at,
        detected_at: frame.captured_at + inference.latency_ms,
        threshold_used: config.threshold,
    })
}
