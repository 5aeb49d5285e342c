use std::collections::BTreeMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LogicalMs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Registered,
}

/// A custom-label training request. Only recorded; no training happens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomLabelJob {
    pub name: String,
    pub example_count: u64,
    pub status: JobStatus,
    pub created_at: LogicalMs,
}

#[derive(Debug, Default)]
pub struct CustomLabelRegistry {
    jobs: Mutex<BTreeMap<String, CustomLabelJob>>,
}

impl CustomLabelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create(&self, name: &str, example_count: u64, at: LogicalMs) -> Result<CustomLabelJob> {
        if name.trim().is_empty() {
            return Err(Error::validation("job name must be non-empty"));
        }
        if example_count == 0 {
            return Err(Error::validation("example_count must be > 0"));
        }
        let mut jobs = self.jobs.lock();
        if jobs.contains_key(name) {
            return Err(Error::Conflict(format!("custom label job {name} exists")));
        }
        let job = CustomLabelJob {
            name: name.to_string(),
            example_count,
            status: JobStatus::Registered,
            created_at: at,
        };
        jobs.insert(name.to_string(), job.clone());
        Ok(job)
    }

    pub fn jobs(&self) -> Vec<CustomLabelJob> {
        self.jobs.lock().values().cloned().collect()
    }
}
