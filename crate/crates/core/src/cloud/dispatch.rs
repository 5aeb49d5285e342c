//! Event-triggered function dispatch over the ingestion stream.
//!
//! A single logical consumer walks the stream from its checkpoint. A record
//! is handed to every handler; the checkpoint moves past it only once all
//! handlers succeed. A failing record stops the pass so later records are
//! never processed ahead of it, and after `max_attempts` failed passes it is
//! moved to the dead-letter list.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::EventId;

use super::notify::Notifier;
use super::store::MetadataStore;
use super::stream::{IngestStream, StreamRecord};

pub const DEFAULT_MAX_HANDLER_ATTEMPTS: u32 = 3;

/// A function triggered for each new stream record. Handlers may see the same
/// record again after a failed pass and must tolerate that.
pub trait Handler: Send + Sync {
    fn name(&self) -> &str;
    fn handle(&self, record: &StreamRecord) -> Result<()>;
}

pub struct PersistMetadata(pub Arc<MetadataStore>);

impl Handler for PersistMetadata {
    fn name(&self) -> &str {
        "persist_metadata"
    }

    fn handle(&self, record: &StreamRecord) -> Result<()> {
        self.0.put(&record.payload);
        Ok(())
    }
}

pub struct PublishNotification(pub Arc<Notifier>);

impl Handler for PublishNotification {
    fn name(&self) -> &str {
        "publish_notification"
    }

    fn handle(&self, record: &StreamRecord) -> Result<()> {
        self.0.publish(&record.payload, record.ingested_at);
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Every stream entry below this sequence is fully processed.
    pub position: u64,
    /// Failed passes per sequence at or past the checkpoint.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<u64, u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DispatchReport {
    pub delivered: u64,
    pub skipped_duplicates: u64,
    pub dead_lettered: u64,
    /// Sequence the pass stopped at, if a handler failed.
    pub stalled_at: Option<u64>,
}

impl DispatchReport {
    pub fn made_progress(&self) -> bool {
        self.delivered + self.skipped_duplicates + self.dead_lettered > 0
    }
}

pub struct Dispatcher {
    handlers: Vec<Arc<dyn Handler>>,
    checkpoint: Checkpoint,
    processed: HashSet<EventId>,
    dead_letter: Vec<StreamRecord>,
    max_attempts: u32,
}

impl Dispatcher {
    pub fn new(handlers: Vec<Arc<dyn Handler>>, max_attempts: u32) -> Self {
        Dispatcher {
            handlers,
            checkpoint: Checkpoint::default(),
            processed: HashSet::new(),
            dead_letter: Vec::new(),
            max_attempts: max_attempts.max(1),
        }
    }

    /// The two handlers every cloud runs.
    pub fn builtin(store: Arc<MetadataStore>, notifier: Arc<Notifier>, max_attempts: u32) -> Self {
        Dispatcher::new(
            vec![
                Arc::new(PersistMetadata(store)),
                Arc::new(PublishNotification(notifier)),
            ],
            max_attempts,
        )
    }

    pub fn add_handler(&mut self, handler: Arc<dyn Handler>) {
        self.handlers.push(handler);
    }

    pub fn set_handlers(&mut self, handlers: Vec<Arc<dyn Handler>>) {
        self.handlers = handlers;
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn dead_letter(&self) -> &[StreamRecord] {
        &self.dead_letter
    }

    /// One pass from the checkpoint to the current end of the stream.
    pub fn pass(&mut self, stream: &IngestStream) -> DispatchReport {
        let mut report = DispatchReport::default();
        let end = stream.len();
        while self.checkpoint.position < end {
            let seq = self.checkpoint.position;
            let record = stream.get(seq).expect("sequence below stream length");
            if record.duplicate || self.processed.contains(&record.payload.event_id) {
                report.skipped_duplicates += 1;
                self.advance();
                continue;
            }
            let failure = self
                .handlers
                .iter()
                .find_map(|h| h.handle(&record).err().map(|e| (h.name().to_string(), e)));
            match failure {
                None => {
                    self.processed.insert(record.payload.event_id.clone());
                    report.delivered += 1;
                    self.advance();
                }
                Some((handler, err)) => {
                    let attempts = self.checkpoint.failures.entry(seq).or_insert(0);
                    *attempts += 1;
                    log::warn!("handler {handler} failed on sequence {seq} (attempt {attempts}): {err}");
                    if *attempts >= self.max_attempts {
                        self.dead_letter.push(record);
                        report.dead_lettered += 1;
                        self.advance();
                    } else {
                        report.stalled_at = Some(seq);
                        break;
                    }
                }
            }
        }
        report
    }

    /// Runs passes until the consumer has caught up with the stream.
    pub fn drain(&mut self, stream: &IngestStream) -> DispatchReport {
        let mut total = DispatchReport::default();
        loop {
            let r = self.pass(stream);
            total.delivered += r.delivered;
            total.skipped_duplicates += r.skipped_duplicates;
            total.dead_lettered += r.dead_lettered;
            total.stalled_at = r.stalled_at;
            if r.stalled_at.is_none() {
                return total;
            }
        }
    }

    fn advance(&mut self) {
        let seq = self.checkpoint.position;
        self.checkpoint.failures.remove(&seq);
        self.checkpoint.position += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::notify::SubscriptionFilter;
    use crate::error::Error;
    use crate::model::{AnalyticsRecord, DeviceId};
    use parking_lot::Mutex;

    fn rec(seq: u64) -> AnalyticsRecord {
        let d = DeviceId::new("door-1").unwrap();
        AnalyticsRecord {
            event_id: EventId::new(&d, seq),
            device_id: d,
            frame_id: format!("f-{seq}"),
            detections: vec![],
            backend_id: "b".into(),
            captured_at: seq * 10,
            detected_at: seq * 10 + 1,
            threshold_used: 90.0,
        }
    }

    /// Fails on the listed sequences, once per listing.
    struct Flaky(Mutex<Vec<u64>>);

    impl Handler for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }
        fn handle(&self, r: &StreamRecord) -> Result<()> {
            let mut left = self.0.lock();
            if let Some(i) = left.iter().position(|&s| s == r.sequence) {
                left.remove(i);
                return Err(Error::Handler {
                    handler: "flaky".into(),
                    reason: "injected".into(),
                });
            }
            Ok(())
        }
    }

    fn setup(fail_on: Vec<u64>) -> (Dispatcher, Arc<MetadataStore>, Arc<Notifier>) {
        let store = Arc::new(MetadataStore::new());
        let notifier = Arc::new(Notifier::new());
        notifier.subscribe("phone", SubscriptionFilter::default()).unwrap();
        let mut d = Dispatcher::builtin(store.clone(), notifier.clone(), DEFAULT_MAX_HANDLER_ATTEMPTS);
        d.set_handlers(vec![
            Arc::new(PersistMetadata(store.clone())),
            Arc::new(Flaky(Mutex::new(fail_on))),
            Arc::new(PublishNotification(notifier.clone())),
        ]);
        (d, store, notifier)
    }

    #[test]
    fn happy_path() {
        let stream = IngestStream::new();
        for s in 0..3 {
            stream.append(rec(s), s);
        }
        let (mut d, store, notifier) = setup(vec![]);
        let r = d.pass(&stream);
        assert_eq!(d.checkpoint().position, 3);
        assert_eq!(r.delivered, 3);
        assert_eq!(store.len(), 3);
        assert_eq!(notifier.total_deliveries(), 3);
    }

    #[test]
    fn failed_record_is_redelivered_without_gaps() {
        let stream = IngestStream::new();
        for s in 0..3 {
            stream.append(rec(s), s);
        }
        let (mut d, store, notifier) = setup(vec![2]);
        let first = d.pass(&stream);
        assert_eq!(first.stalled_at, Some(2));
        assert_eq!(d.checkpoint().position, 2);
        assert_eq!(store.len(), 3, "persist ran before the failing handler");
        assert_eq!(notifier.total_deliveries(), 2);
        d.pass(&stream);
        assert_eq!(d.checkpoint().position, 3);
        assert_eq!(store.len(), 3);
        assert_eq!(notifier.total_deliveries(), 3);
        assert!(d.checkpoint().failures.is_empty());
    }

    #[test]
    fn stall_blocks_later_records() {
        let stream = IngestStream::new();
        for s in 0..3 {
            stream.append(rec(s), s);
        }
        let (mut d, _, notifier) = setup(vec![0]);
        d.pass(&stream);
        assert_eq!(d.checkpoint().position, 0);
        assert_eq!(notifier.total_deliveries(), 0);
    }

    #[test]
    fn duplicates_skip_handlers() {
        let stream = IngestStream::new();
        stream.append(rec(0), 0);
        let (_, dup) = stream.append(rec(0), 1);
        assert!(dup);
        let (mut d, store, notifier) = setup(vec![]);
        let r = d.pass(&stream);
        assert_eq!((r.delivered, r.skipped_duplicates), (1, 1));
        assert_eq!(d.checkpoint().position, 2);
        assert_eq!((store.len(), notifier.total_deliveries()), (1, 1));
    }

    #[test]
    fn poison_record_dead_lettered_after_max_passes() {
        let stream = IngestStream::new();
        stream.append(rec(0), 0);
        stream.append(rec(1), 1);
        let (mut d, _, notifier) = setup(vec![0, 0, 0]);
        d.pass(&stream);
        d.pass(&stream);
        let third = d.pass(&stream);
        assert_eq!(third.dead_lettered, 1);
        assert_eq!(d.dead_letter().len(), 1);
        assert_eq!(d.checkpoint().position, 2);
        assert_eq!(notifier.total_deliveries(), 1);
    }
}
