use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::cloud::{Ingest, IngestAck};
use crate::device::SessionToken;
use crate::draw;
use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, EventId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before the first retry; doubles for each further one.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_ms: 100,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::validation("retry.max_attempts must be at least 1"));
        }
        Ok(())
    }

    /// Logical wait before attempt `attempt` (1-based; the first has none).
    pub fn backoff_before(&self, attempt: u32) -> u64 {
        if attempt <= 1 {
            return 0;
        }
        self.backoff_ms.saturating_mul(1u64 << (attempt - 2).min(32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub event_id: EventId,
    pub sequence: u64,
    pub duplicate: bool,
    pub attempts: u32,
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub record: AnalyticsRecord,
    pub attempts: u32,
    pub reason: String,
}

/// At-least-once sender. Records are sent one at a time; a record is
/// retried until acknowledged or out of attempts, so one device's records
/// reach the cloud in the order they were handed over.
///
/// Once a device has a dead letter, its later records are parked behind it
/// instead of being sent, and [`Forwarder::redrive`] replays them in order.
#[derive(Debug, Default)]
pub struct Forwarder {
    retry: RetryPolicy,
    dead_letters: Vec<DeadLetter>,
    blocked: BTreeSet<DeviceId>,
}

impl Forwarder {
    pub fn new(retry: RetryPolicy) -> Result<Self> {
        retry.validate()?;
        Ok(Forwarder {
            retry,
            ..Default::default()
        })
    }

    pub fn retry(&self) -> RetryPolicy {
        self.retry
    }

    pub fn dead_letters(&self) -> &[DeadLetter] {
        &self.dead_letters
    }

    pub fn forward(&mut self, record: &AnalyticsRecord, session: &SessionToken, cloud: &dyn Ingest) -> Result<Ack> {
        if self.blocked.contains(&record.device_id) {
            self.park(record, 0, "queued behind an earlier dead letter".into());
            return Err(Error::DeliveryFailed {
                event_id: record.event_id.to_string(),
                attempts: 0,
            });
        }
        let mut backoff = 0;
        let mut last_reason = String::new();
        for attempt in 1..=self.retry.max_attempts {
            backoff += self.retry.backoff_before(attempt);
            match cloud.ingest(record, session) {
                Ok(IngestAck { sequence, duplicate }) => {
                    return Ok(Ack {
                        event_id: record.event_id.clone(),
                        sequence,
                        duplicate,
                        attempts: attempt,
                        backoff_ms: backoff,
                    })
                }
                Err(e @ Error::AuthFailed(_)) => return Err(e),
                Err(e) if e.is_transient() => {
                    log::debug!("ingest of {} failed (attempt {attempt}): {e}", record.event_id);
                    last_reason = e.to_string();
                }
                Err(e) => {
                    self.park(record, attempt, e.to_string());
                    return Err(e);
                }
            }
        }
        log::warn!(
            "dead-lettering {} after {} attempts",
            record.event_id,
            self.retry.max_attempts
        );
        self.park(record, self.retry.max_attempts, last_reason);
        Err(Error::DeliveryFailed {
            event_id: record.event_id.to_string(),
            attempts: self.retry.max_attempts,
        })
    }

    fn park(&mut self, record: &AnalyticsRecord, attempts: u32, reason: String) {
        self.blocked.insert(record.device_id.clone());
        self.dead_letters.push(DeadLetter {
            record: record.clone(),
            attempts,
            reason,
        });
    }

    /// Sends every dead letter again, oldest first. Letters that fail again
    /// go back to the queue, still in order.
    pub fn redrive(&mut self, session_for: impl Fn(&DeviceId) -> Option<SessionToken>, cloud: &dyn Ingest) -> Vec<Ack> {
        let letters = std::mem::take(&mut self.dead_letters);
        self.blocked.clear();
        let mut acks = Vec::new();
        for letter in letters {
            let Some(session) = session_for(&letter.record.device_id) else {
                self.park(&letter.record, letter.attempts, "no session".into());
                continue;
            };
            if let Ok(ack) = self.forward(&letter.record, &session, cloud) {
                acks.push(ack);
            }
        }
        acks
    }

    /// Writes the dead-letter queue as a JSON array.
    pub fn save_dead_letters(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.dead_letters)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Fault injector for the ingest path. Each attempt fails with probability
/// `failure_rate`; a failure either drops the request or loses the
/// acknowledgement after the cloud has accepted the record, so retries
/// produce real duplicates. Outcomes are seeded per `(event, attempt)`.
pub struct FlakyIngest<I> {
    inner: I,
    failure_rate: f64,
    seed: u64,
    attempts: Mutex<HashMap<EventId, u64>>,
    lost_requests: AtomicU64,
    lost_acks: AtomicU64,
}

impl<I: Ingest> FlakyIngest<I> {
    pub fn new(inner: I, failure_rate: f64, seed: u64) -> Result<Self> {
        crate::model::check_fraction("failure_rate", failure_rate)?;
        Ok(FlakyIngest {
            inner,
            failure_rate,
            seed,
            attempts: Mutex::new(HashMap::new()),
            lost_requests: AtomicU64::new(0),
            lost_acks: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &I {
        &self.inner
    }

    pub fn lost_requests(&self) -> u64 {
        self.lost_requests.load(Ordering::Relaxed)
    }

    pub fn lost_acks(&self) -> u64 {
        self.lost_acks.load(Ordering::Relaxed)
    }
}

impl<I: Ingest> Ingest for FlakyIngest<I> {
    fn ingest(&self, record: &AnalyticsRecord, session: &SessionToken) -> Result<IngestAck> {
        let attempt = {
            let mut map = self.attempts.lock();
            let n = map.entry(record.event_id.clone()).or_insert(0);
            *n += 1;
            n.to_string()
        };
        let key = [record.event_id.as_str(), attempt.as_str(), "ingest-fault"];
        if draw::unit(self.seed, &key) >= self.failure_rate {
            return self.inner.ingest(record, session);
        }
        if draw::unit(
            self.seed,
            &[record.event_id.as_str(), attempt.as_str(), "ingest-fault-mode"],
        ) < 0.5
        {
            self.lost_requests.fetch_add(1, Ordering::Relaxed);
            Err(Error::Unavailable("request lost".into()))
        } else {
            self.inner.ingest(record, session)?;
            self.lost_acks.fetch_add(1, Ordering::Relaxed);
            Err(Error::Unavailable("acknowledgement lost".into()))
        }
    }
}
