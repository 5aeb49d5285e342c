use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogicalMs;

/// One request as seen by the client, on the logical clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySample {
    pub request_at: LogicalMs,
    pub response_at: LogicalMs,
}

impl LatencySample {
    pub fn latency(&self) -> u64 {
        self.response_at - self.request_at
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub backend_id: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub min_ms: u64,
    pub max_ms: u64,
}

/// Percentiles use the nearest-rank method.
pub fn latency_stats(backend_id: &str, trace: &[LatencySample]) -> Result<LatencyStats> {
    if trace.is_empty() {
        return Err(Error::validation(format!("empty latency trace for {backend_id}")));
    }
    if let Some(bad) = trace.iter().find(|s| s.response_at < s.request_at) {
        return Err(Error::validation(format!(
            "response at {} precedes request at {}",
            bad.response_at, bad.request_at
        )));
    }
    let mut xs: Vec<u64> = trace.iter().map(LatencySample::latency).collect();
    xs.sort_unstable();
    let rank = |p: f64| {
        let r = (p / 100.0 * xs.len() as f64).ceil() as usize;
        xs[r.clamp(1, xs.len()) - 1]
    };
    Ok(LatencyStats {
        backend_id: backend_id.to_string(),
        samples: xs.len(),
        mean_ms: xs.iter().sum::<u64>() as f64 / xs.len() as f64,
        p50_ms: rank(50.0),
        p95_ms: rank(95.0),
        min_ms: xs[0],
        max_ms: xs[xs.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn trace(lat: &[u64]) -> Vec<LatencySample> {
        lat.iter()
            .enumerate()
            .map(|(i, &l)| LatencySample {
                request_at: i as u64 * 1000,
                response_at: i as u64 * 1000 + l,
            })
            .collect()
    }

    #[test]
    fn constant_trace() {
        let s = latency_stats("b", &trace(&[100, 100, 100])).unwrap();
        assert_eq!((s.mean_ms, s.p50_ms, s.p95_ms), (100.0, 100, 100));
    }

    #[test]
    fn nearest_rank() {
        let lat: Vec<u64> = (1..=20).collect();
        let s = latency_stats("b", &trace(&lat)).unwrap();
        assert_eq!((s.p50_ms, s.p95_ms, s.min_ms, s.max_ms), (10, 19, 1, 20));
        assert_eq!(s.mean_ms, 10.5);
    }

    #[test]
    fn rejects_empty_and_inverted() {
        assert!(latency_stats("b", &[]).is_err());
        let bad = [LatencySample {
            request_at: 5,
            response_at: 4,
        }];
        assert!(latency_stats("b", &bad).is_err());
    }

    proptest! {
        #[test]
        fn ordered(lat in proptest::collection::vec(0u64..10_000, 1..200)) {
            let s = latency_stats("b", &trace(&lat)).unwrap();
            prop_assert!(s.min_ms <= s.p50_ms && s.p50_ms <= s.p95_ms && s.p95_ms <= s.max_ms);
            prop_assert!(s.min_ms as f64 <= s.mean_ms && s.mean_ms <= s.max_ms as f64);
        }
    }
}
