use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FaceCategory, FaceIdentity};

pub const DEFAULT_COLLECTION: &str = "household";

/// Enrolled identities. Faces are opaque tokens matched exactly; anything
/// not enrolled is `Unknown`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceCollection {
    pub collection_id: String,
    pub entries: BTreeMap<String, FaceCategory>,
}

impl FaceCollection {
    pub fn new(collection_id: impl Into<String>) -> Self {
        FaceCollection {
            collection_id: collection_id.into(),
            entries: BTreeMap::new(),
        }
    }

    /// Re-enrolling an identity overwrites its category.
    pub fn enroll(&mut self, identity: &str, category: FaceCategory) -> Result<()> {
        if category == FaceCategory::Unknown {
            return Err(Error::validation("cannot enroll a face as Unknown"));
        }
        if identity.trim().is_empty() {
            return Err(Error::validation("face identity must be non-empty"));
        }
        self.entries.insert(identity.to_string(), category);
        Ok(())
    }

    pub fn lookup(&self, identity: &str) -> Option<FaceCategory> {
        self.entries.get(identity).copied()
    }

    pub fn search(&self, token: &str) -> FaceIdentity {
        FaceIdentity {
            identity: token.to_string(),
            category: self.lookup(token).unwrap_or(FaceCategory::Unknown),
        }
    }
}

/// All collections, shared between the detection service and any local
/// backend. Reads run concurrently; enrollment takes the write lock.
#[derive(Debug, Default)]
pub struct FaceStore {
    collections: RwLock<BTreeMap<String, FaceCollection>>,
}

impl FaceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_collections(collections: impl IntoIterator<Item = FaceCollection>) -> Self {
        FaceStore {
            collections: RwLock::new(collections.into_iter().map(|c| (c.collection_id.clone(), c)).collect()),
        }
    }

    /// Creates the collection on first enrollment.
    pub fn enroll(&self, collection_id: &str, identity: &str, category: FaceCategory) -> Result<()> {
        let mut guard = self.collections.write();
        let coll = guard
            .entry(collection_id.to_string())
            .or_insert_with(|| FaceCollection::new(collection_id));
        coll.enroll(identity, category)
    }

    /// Creates an empty collection unless it already exists.
    pub fn create_collection(&self, collection_id: &str) {
        self.collections
            .write()
            .entry(collection_id.to_string())
            .or_insert_with(|| FaceCollection::new(collection_id));
    }

    pub fn search(&self, collection_id: &str, token: &str) -> Result<FaceIdentity> {
        self.collections
            .read()
            .get(collection_id)
            .map(|c| c.search(token))
            .ok_or_else(|| Error::NotFound(format!("face collection {collection_id}")))
    }

    pub fn contains(&self, collection_id: &str) -> bool {
        self.collections.read().contains_key(collection_id)
    }

    pub fn snapshot(&self) -> Vec<FaceCollection> {
        self.collections.read().values().cloned().collect()
    }
}
