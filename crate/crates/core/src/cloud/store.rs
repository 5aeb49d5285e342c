//! Key-value metadata store and content-addressed blob store.

use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, LogicalMs};

/// Analytics records keyed by `(device_id, event sequence)`.
#[derive(Debug, Default)]
pub struct MetadataStore {
    records: RwLock<BTreeMap<DeviceId, BTreeMap<u64, AnalyticsRecord>>>,
}

impl MetadataStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Idempotent on `(device_id, event_id)`. Returns whether the record was
    /// new.
    pub fn put(&self, record: &AnalyticsRecord) -> bool {
        let mut guard = self.records.write();
        let per_device = guard.entry(record.device_id.clone()).or_default();
        let seq = record.event_id.sequence();
        if per_device.contains_key(&seq) {
            return false;
        }
        per_device.insert(seq, record.clone());
        true
    }

    /// Records of `device` captured in `[from, to]`, in event order.
    pub fn get_activities(&self, device: &DeviceId, from: LogicalMs, to: LogicalMs) -> Result<Vec<AnalyticsRecord>> {
        if from > to {
            return Err(Error::validation(format!("inverted range [{from}, {to}]")));
        }
        Ok(self
            .records
            .read()
            .get(device)
            .map(|m| {
                m.values()
                    .filter(|r| (from..=to).contains(&r.captured_at))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default())
    }

    pub fn all_for(&self, device: &DeviceId) -> Vec<AnalyticsRecord> {
        self.records
            .read()
            .get(device)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }

    /// Every record, grouped by device and ordered by event sequence.
    pub fn all(&self) -> Vec<AnalyticsRecord> {
        self.records.read().values().flat_map(|m| m.values().cloned()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.read().values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlobRef(pub String);

#[derive(Debug, Default)]
pub struct BlobStore {
    blobs: RwLock<BTreeMap<BlobRef, Vec<u8>>>,
}

impl BlobStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// The reference is the SHA-256 of the content, so equal bytes share a
    /// reference.
    pub fn put(&self, bytes: &[u8]) -> BlobRef {
        let r = BlobRef(hex::encode(Sha256::digest(bytes)));
        self.blobs.write().entry(r.clone()).or_insert_with(|| bytes.to_vec());
        r
    }

    pub fn get(&self, r: &BlobRef) -> Result<Vec<u8>> {
        self.blobs
            .read()
            .get(r)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("blob {}", r.0)))
    }

    pub fn len(&self) -> usize {
        self.blobs.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
