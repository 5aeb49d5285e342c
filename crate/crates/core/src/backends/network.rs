use serde::{Deserialize, Serialize};

use crate::draw;

/// One-way delay model: `base_delay_ms` plus uniform integer jitter in
/// `[-jitter_ms, +jitter_ms]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub base_delay_ms: u64,
    pub jitter_ms: u64,
}

impl Default for NetworkModel {
    fn default() -> Self {
        NetworkModel {
            base_delay_ms: 40,
            jitter_ms: 10,
        }
    }
}

impl NetworkModel {
    pub const NONE: NetworkModel = NetworkModel {
        base_delay_ms: 0,
        jitter_ms: 0,
    };

    pub fn fixed(base_delay_ms: u64) -> Self {
        NetworkModel {
            base_delay_ms,
            jitter_ms: 0,
        }
    }

    /// Delay for one traversal, drawn from `(seed, key)`.
    pub fn one_way(&self, seed: u64, key: &[&str]) -> u64 {
        let jitter = self.jitter_ms.min(self.base_delay_ms);
        let span = (2 * jitter + 1) as usize;
        self.base_delay_ms - jitter + draw::index(seed, key, span) as u64
    }

    /// Smallest and largest possible round trip around `service_ms`.
    pub fn round_trip_bounds(&self, service_ms: u64) -> (u64, u64) {
        let jitter = self.jitter_ms.min(self.base_delay_ms);
        (
            2 * (self.base_delay_ms - jitter) + service_ms,
            2 * (self.base_delay_ms + jitter) + service_ms,
        )
    }

    /// Expected round trip around `service_ms`.
    pub fn expected_round_trip(&self, service_ms: u64) -> u64 {
        2 * self.base_delay_ms + service_ms
    }
}
