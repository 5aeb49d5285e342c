//! Synthetic manifests with controlled positive/negative marginals.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::device::{Dataset, ManifestEntry};
use crate::error::{Error, Result};
use crate::model::{check_fraction, DeviceId, ScenarioKind};

/// Share of positive frames per scenario, one row per scenario as in the
/// published per-scenario table: half positives everywhere except the
/// multi-object row (17 of 100).
pub fn default_positive_fraction(kind: ScenarioKind) -> f64 {
    match kind {
        ScenarioKind::MultiObject => 0.17,
        _ => 0.5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Frames generated per listed scenario.
    #[serde(default = "default_frames")]
    pub frames_per_scenario: usize,
    #[serde(default = "all_scenarios")]
    pub scenarios: Vec<ScenarioKind>,
    /// Overrides of [`default_positive_fraction`].
    #[serde(default)]
    pub positive_fraction: BTreeMap<ScenarioKind, f64>,
    #[serde(default = "default_devices")]
    pub devices: usize,
    /// Identities cycled through on positive face frames. Every
    /// `identities.len() + 1`-th face belongs to a stranger.
    #[serde(default = "default_identities")]
    pub identities: Vec<String>,
}

fn default_frames() -> usize {
    100
}

fn all_scenarios() -> Vec<ScenarioKind> {
    ScenarioKind::ALL.to_vec()
}

fn default_devices() -> usize {
    1
}

fn default_identities() -> Vec<String> {
    vec!["alice".into(), "bob".into(), "carol".into()]
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            frames_per_scenario: default_frames(),
            scenarios: all_scenarios(),
            positive_fraction: BTreeMap::new(),
            devices: default_devices(),
            identities: default_identities(),
        }
    }
}

impl DatasetSpec {
    /// Only positives: `n` frames of each listed scenario.
    pub fn positives_only(n: usize, scenarios: &[ScenarioKind]) -> Self {
        DatasetSpec {
            frames_per_scenario: n,
            scenarios: scenarios.to_vec(),
            positive_fraction: scenarios.iter().map(|&k| (k, 1.0)).collect(),
            ..Default::default()
        }
    }

    pub fn positives(&self, kind: ScenarioKind) -> usize {
        let frac = self
            .positive_fraction
            .get(&kind)
            .copied()
            .unwrap_or_else(|| default_positive_fraction(kind));
        (frac * self.frames_per_scenario as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 {
            return Err(Error::validation("at least one device is required"));
        }
        if self.scenarios.is_empty() || self.frames_per_scenario == 0 {
            return Err(Error::validation("dataset would be empty"));
        }
        for (k, f) in &self.positive_fraction {
            check_fraction(&format!("positive_fraction[{k}]"), *f)?;
        }
        Ok(())
    }
}

pub fn device_name(i: usize) -> DeviceId {
    DeviceId::new(format!("door-{}", i + 1)).expect("well-formed")
}

/// Positive frames carry one label, cycling through the scenario's
/// vocabulary; negatives carry none. Frames are shuffled with `seed` and
/// dealt round-robin to `door-1..door-N`.
pub fn generate_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut entries = Vec::new();
    for &kind in &spec.scenarios {
        let positives = spec.positives(kind);
        let vocab = kind.vocabulary();
        for i in 0..spec.frames_per_scenario {
            let positive = i < positives;
            let truth_identity = (positive && kind == ScenarioKind::FaceRecognition).then(|| {
                let slot = i % (spec.identities.len() + 1);
                spec.identities
                    .get(slot)
                    .cloned()
                    .unwrap_or_else(|| format!("stranger-{i}"))
            });
            entries.push(ManifestEntry {
                frame_id: format!("{}-{i:05}", kind.short_name()),
                scenario: kind,
                truth_labels: if positive {
                    vec![vocab[i % vocab.len()].to_string()]
                } else {
                    Vec::new()
                },
                truth_identity,
                device_id: device_name(0),
            });
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    entries.shuffle(&mut rng);
    for (i, e) in entries.iter_mut().enumerate() {
        e.device_id = device_name(i % spec.devices);
    }
    Dataset::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_marginals() {
        let d = generate_dataset(&DatasetSpec::default(), 1).unwrap();
        assert_eq!(d.len(), 500);
        let positives = |k: ScenarioKind| {
            d.entries()
                .iter()
                .filter(|e| e.scenario == k && !e.truth_labels.is_empty())
                .count()
        };
        assert_eq!(positives(ScenarioKind::FaceRecognition), 50);
        assert_eq!(positives(ScenarioKind::MultiObject), 17);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let spec = DatasetSpec {
            devices: 3,
            ..Default::default()
        };
        let a = generate_dataset(&spec, 5).unwrap().to_ndjson().unwrap();
        assert_eq!(a, generate_dataset(&spec, 5).unwrap().to_ndjson().unwrap());
        assert_ne!(a, generate_dataset(&spec, 6).unwrap().to_ndjson().unwrap());
        let d = generate_dataset(&spec, 5).unwrap();
        assert_eq!(d.devices().len(), 3);
    }

    #[test]
    fn face_frames_mix_known_and_strangers() {
        let d = generate_dataset(&DatasetSpec::positives_only(8, &[ScenarioKind::FaceRecognition]), 0).unwrap();
        let ids: Vec<_> = d.entries().iter().filter_map(|e| e.truth_identity.clone()).collect();
        assert_eq!(ids.len(), 8);
        assert_eq!(ids.iter().filter(|i| i.starts_with("stranger")).count(), 2);
    }

    #[test]
    fn invalid_specs() {
        let s = DatasetSpec {
            devices: 0,
            ..Default::default()
        };
        assert!(generate_dataset(&s, 0).is_err());
        let mut s = DatasetSpec::default();
        s.positive_fraction.insert(ScenarioKind::UnsafeContent, 1.5);
        assert!(generate_dataset(&s, 0).is_err());
    }
}
