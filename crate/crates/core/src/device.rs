//! Device layer: the registry with its token+digest handshake, the dataset
//! manifest that backs every simulated frame, and motion-triggered capture.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DeviceId, EventIdIssuer, FrameSample, Label, LogicalMs, MotionEvent, ScenarioKind};

pub const DEFAULT_DEBOUNCE_MS: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_id: DeviceId,
    pub attributes: BTreeMap<String, String>,
    pub credential_fingerprint: String,
    pub registered_at: LogicalMs,
}

/// Handed to the device once at registration. The registry keeps only the
/// fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Credential {
    pub device_id: DeviceId,
    pub secret: String,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionToken(pub String);

impl SessionToken {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn fingerprint(secret: &str) -> String {
    hex::encode(Sha256::digest(secret.as_bytes()))
}

#[derive(Debug)]
struct RegistryState {
    devices: BTreeMap<DeviceId, DeviceRecord>,
    sessions: HashMap<SessionToken, DeviceId>,
    rng: ChaCha20Rng,
}

/// Registry of known devices and their live sessions.
///
/// All mutation happens under one lock, so uniqueness checks and inserts are
/// atomic with respect to concurrent registrations.
#[derive(Debug)]
pub struct DeviceRegistry {
    state: Mutex<RegistryState>,
}

impl DeviceRegistry {
    /// Secrets and session tokens come from a ChaCha20 stream seeded here;
    /// fixed seeds give replayable runs.
    pub fn new(seed: u64) -> Self {
        DeviceRegistry {
            state: Mutex::new(RegistryState {
                devices: BTreeMap::new(),
                sessions: HashMap::new(),
                rng: ChaCha20Rng::seed_from_u64(seed),
            }),
        }
    }

    pub fn register(
        &self,
        device_id: &DeviceId,
        attributes: BTreeMap<String, String>,
        at: LogicalMs,
    ) -> Result<(DeviceRecord, Credential)> {
        let mut st = self.state.lock();
        if st.devices.contains_key(device_id) {
            return Err(Error::Conflict(format!("device {device_id} already registered")));
        }
        let secret = hex::encode(st.rng.random::<[u8; 32]>());
        let fp = fingerprint(&secret);
        let record = DeviceRecord {
            device_id: device_id.clone(),
            attributes,
            credential_fingerprint: fp.clone(),
            registered_at: at,
        };
        st.devices.insert(device_id.clone(), record.clone());
        Ok((
            record,
            Credential {
                device_id: device_id.clone(),
                secret,
                fingerprint: fp,
            },
        ))
    }

    pub fn authenticate(&self, device_id: &DeviceId, secret: &str) -> Result<SessionToken> {
        let mut st = self.state.lock();
        let record = st
            .devices
            .get(device_id)
            .ok_or_else(|| Error::NotFound(format!("device {device_id}")))?;
        if !digest_eq(&fingerprint(secret), &record.credential_fingerprint) {
            return Err(Error::AuthFailed(format!("bad credential for {device_id}")));
        }
        let token = SessionToken(hex::encode(st.rng.random::<[u8; 32]>()));
        st.sessions.insert(token.clone(), device_id.clone());
        Ok(token)
    }

    /// Resolves a session to the device that owns it.
    pub fn session_device(&self, token: &SessionToken) -> Result<DeviceId> {
        self.state
            .lock()
            .sessions
            .get(token)
            .cloned()
            .ok_or_else(|| Error::AuthFailed("invalid session token".into()))
    }

    pub fn get(&self, device_id: &DeviceId) -> Option<DeviceRecord> {
        self.state.lock().devices.get(device_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.state.lock().devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn digest_eq(a: &str, b: &str) -> bool {
    a.len() == b.len() && a.bytes().zip(b.bytes()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

/// One line of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub frame_id: String,
    pub scenario: ScenarioKind,
    pub truth_labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_identity: Option<String>,
    pub device_id: DeviceId,
}

/// Frames available to the simulation, in manifest order.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    entries: Vec<ManifestEntry>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.frame_id.is_empty() {
                return Err(Error::Dataset(format!("entry {i} has an empty frame_id")));
            }
            for l in &e.truth_labels {
                Label::new(l, e.scenario)
                    .map_err(|_| Error::Dataset(format!("frame {}: empty truth label", e.frame_id)))?;
            }
            if index.insert(e.frame_id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate frame_id {}", e.frame_id)));
            }
        }
        Ok(Dataset { entries, index })
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| Error::Dataset(format!("manifest line {}: {e}", n + 1)))?;
            entries.push(entry);
        }
        Dataset::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        Dataset::from_ndjson(&text)
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_ndjson()?.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn get(&self, frame_id: &str) -> Option<&ManifestEntry> {
        self.index.get(frame_id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn devices(&self) -> BTreeSet<DeviceId> {
        self.entries.iter().map(|e| e.device_id.clone()).collect()
    }

    /// Materializes a frame as captured at logical time `at`.
    pub fn resolve(&self, frame_id: &str, at: LogicalMs) -> Result<FrameSample> {
        let e = self
            .get(frame_id)
            .ok_or_else(|| Error::Dataset(format!("unknown frame_id {frame_id}")))?;
        let truth = e
            .truth_labels
            .iter()
            .map(|l| Label::new(l, e.scenario))
            .collect::<Result<BTreeSet<_>>>()?;
        Ok(FrameSample {
            frame_id: e.frame_id.clone(),
            device_id: e.device_id.clone(),
            captured_at: at,
            truth,
            truth_identity: e.truth_identity.clone(),
            scenario: e.scenario,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub at: LogicalMs,
    pub frame_id: String,
}

/// Timed motion triggers for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub device_id: DeviceId,
    #[serde(default = "default_debounce")]
    pub debounce_ms: u64,
    pub entries: Vec<ScriptEntry>,
}

fn default_debounce() -> u64 {
    DEFAULT_DEBOUNCE_MS
}

impl MotionScript {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// One trigger per frame of `device` in manifest order, `spacing_ms` apart.
    pub fn evenly_spaced(dataset: &Dataset, device: &DeviceId, spacing_ms: u64, debounce_ms: u64) -> Self {
        let entries = dataset
            .entries()
            .iter()
            .filter(|e| &e.device_id == device)
            .enumerate()
            .map(|(i, e)| ScriptEntry {
                at: i as u64 * spacing_ms,
                frame_id: e.frame_id.clone(),
            })
            .collect();
        MotionScript {
            device_id: device.clone(),
            debounce_ms,
            entries,
        }
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if self.entries.windows(2).any(|w| w[1].at < w[0].at) {
            return Err(Error::validation(format!(
                "motion script for {} is not sorted by time",
                self.device_id
            )));
        }
        for e in &self.entries {
            let frame = dataset
                .get(&e.frame_id)
                .ok_or_else(|| Error::Dataset(format!("unknown frame_id {}", e.frame_id)))?;
            if frame.device_id != self.device_id {
                return Err(Error::Dataset(format!(
                    "frame {} belongs to {}, not {}",
                    e.frame_id, frame.device_id, self.device_id
                )));
            }
        }
        Ok(())
    }
}

/// Replays a motion script: triggers closer than `debounce_ms` to the last
/// emitted event are dropped, every surviving trigger captures one frame.
pub fn run_motion_script(
    script: &MotionScript,
    dataset: &Dataset,
    ids: &mut EventIdIssuer,
) -> Result<Vec<(MotionEvent, FrameSample)>> {
    script.validate(dataset)?;
    let mut out = Vec::new();
    let mut last: Option<LogicalMs> = None;
    for entry in &script.entries {
        if let Some(prev) = last {
            if entry.at - prev < script.debounce_ms {
                continue;
            }
        }
        last = Some(entry.at);
        let frame = dataset.resolve(&entry.frame_id, entry.at)?;
        let event = MotionEvent {
            device_id: script.device_id.clone(),
            at: entry.at,
            event_id: ids.next(&script.device_id),
        };
        out.push((event, frame));
    }
    Ok(out)
}
