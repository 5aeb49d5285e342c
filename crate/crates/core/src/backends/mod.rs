//! Pluggable detection backends.
//!
//! A [`Detector`] turns a frame into labeled detections plus the logical
//! latency it took. Local backends are driven by a calibrated
//! [`BackendProfile`]; the remote backend calls the cloud detection API over
//! a [`Transport`](crate::protocol::Transport).

mod faces;
mod network;
mod profile;
mod remote;
mod simulate;

pub use faces::{FaceCollection, FaceStore, DEFAULT_COLLECTION};
pub use network::NetworkModel;
pub use profile::{
    default_profiles, BackendCategory, BackendProfile, ConfidenceBand, ProfileRegistry, DEFAULT_HIT_BAND,
    DEFAULT_NEAR_MISS_BAND, DEFAULT_SPURIOUS_BAND,
};
pub use remote::RemoteDetector;
pub(crate) use simulate::attach_identities;
pub use simulate::{simulate_detect, SimulatedDetector};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Detection, FrameSample, ScenarioKind};

/// Raw backend output, before thresholding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub detections: Vec<Detection>,
    /// Round trip as seen by the caller, in logical milliseconds.
    pub latency_ms: u64,
}

pub trait Detector: Send + Sync {
    fn descriptor(&self) -> &BackendProfile;

    /// Must be deterministic for a given frame, backend and seed.
    fn detect(&self, frame: &FrameSample, scenario: ScenarioKind) -> Result<Inference>;
}
