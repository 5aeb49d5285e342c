use std::collections::HashSet;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::model::{AnalyticsRecord, DeviceId, EventId, LogicalMs};

/// One entry of the ordered ingestion stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub sequence: u64,
    pub partition: DeviceId,
    pub payload: AnalyticsRecord,
    pub ingested_at: LogicalMs,
    /// Set when an earlier entry already carried the same event id.
    pub duplicate: bool,
}

#[derive(Debug, Default)]
struct Inner {
    records: Vec<StreamRecord>,
    seen: HashSet<EventId>,
}

/// Append-only, totally ordered stream. Appends are atomic, so concurrent
/// producers never observe a gap or a reused sequence number.
#[derive(Debug, Default)]
pub struct IngestStream {
    inner: Mutex<Inner>,
}

impl IngestStream {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends and returns the new entry's sequence and duplicate flag.
    pub fn append(&self, payload: AnalyticsRecord, ingested_at: LogicalMs) -> (u64, bool) {
        let mut inner = self.inner.lock();
        let sequence = inner.records.len() as u64;
        let duplicate = !inner.seen.insert(payload.event_id.clone());
        inner.records.push(StreamRecord {
            sequence,
            partition: payload.device_id.clone(),
            payload,
            ingested_at,
            duplicate,
        });
        (sequence, duplicate)
    }

    pub fn get(&self, sequence: u64) -> Option<StreamRecord> {
        self.inner.lock().records.get(sequence as usize).cloned()
    }

    pub fn len(&self) -> u64 {
        self.inner.lock().records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<StreamRecord> {
        self.inner.lock().records.clone()
    }
}
