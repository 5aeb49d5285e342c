use std::collections::BTreeMap;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::backends::Detector;
use crate::cloud::Ingest;
use crate::device::SessionToken;
use crate::error::{Error, Result};
use crate::model::{AnalyticsRecord, DeviceId, FrameSample, MotionEvent};

use super::{analyze, Ack, DeadLetter, EdgeConfig, Forwarder, FrameSampler};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    /// Every record produced, in the order the forwarder received them.
    pub records: Vec<AnalyticsRecord>,
    pub acks: Vec<Ack>,
    pub suppressed: usize,
    /// Frames the backend could not analyze, with the reason.
    pub detection_failures: Vec<(String, String)>,
    pub dead_letters: Vec<DeadLetter>,
}

enum Msg {
    Record(AnalyticsRecord),
    Suppressed,
    Failed(String, String),
}

/// Runs the edge stages concurrently: one analysis worker per device feeds
/// a single forwarder through a bounded queue of `config.queue_capacity`.
/// A full queue blocks the worker. Each device's frames are analyzed and
/// forwarded in script order; devices interleave freely.
pub fn run_pipeline(
    per_device: Vec<Vec<(MotionEvent, FrameSample)>>,
    config: &EdgeConfig,
    detector: &dyn Detector,
    cloud: &dyn Ingest,
    sessions: &BTreeMap<DeviceId, SessionToken>,
) -> Result<PipelineOutput> {
    config.sampling.validate()?;
    for stream in &per_device {
        if let Some((ev, _)) = stream.first() {
            if !sessions.contains_key(&ev.device_id) {
                return Err(Error::AuthFailed(format!("no session for {}", ev.device_id)));
            }
        }
    }
    let capacity = config.queue_capacity.max(1);
    let mut forwarder = Forwarder::new(config.retry)?;
    let mut out = PipelineOutput::default();

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Msg>(capacity);
        for stream in per_device {
            let tx = tx.clone();
            scope.spawn(move || {
                let mut sampler = FrameSampler::new(config.sampling).expect("validated");
                for (event, frame) in stream {
                    let msg = match sampler.sample(&event, frame) {
                        Ok(None) => Msg::Suppressed,
                        Ok(Some(frame)) => match analyze(&event, &frame, config, detector) {
                            Ok(r) => Msg::Record(r),
                            Err(e) => Msg::Failed(frame.frame_id.clone(), e.to_string()),
                        },
                        Err(e) => Msg::Failed(event.event_id.to_string(), e.to_string()),
                    };
                    if tx.send(msg).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
        for msg in rx {
            match msg {
                Msg::Suppressed => out.suppressed += 1,
                Msg::Failed(id, why) => out.detection_failures.push((id, why)),
                Msg::Record(r) => {
                    let session = &sessions[&r.device_id];
                    match forwarder.forward(&r, session, cloud) {
                        Ok(ack) => out.acks.push(ack),
                        Err(Error::DeliveryFailed { .. }) => {}
                        Err(e) => return Err(e),
                    }
                    out.records.push(r);
                }
            }
        }
        Ok(())
    })?;
    out.dead_letters = forwarder.dead_letters().to_vec();
    Ok(out)
}
