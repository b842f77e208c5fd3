//! Trained-model cache for the prediction scheme.
//!
//! Keyed by a hash of everything that determines the trained model: the
//! partition, the scope, the training parameters and the participant ids.
//! Models are stored at `f32` precision; the coordinator quantizes fresh
//! models the same way so cached and fresh answers are identical.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use fedvis_core::model::{ModelParams, RoundReport, TrainConfig};
use fedvis_core::pipeline::{PartitionSpec, ScopeFilter};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct CachedModel {
    pub params: ModelParams,
    pub rounds: Vec<RoundReport>,
}

#[derive(Serialize, Deserialize)]
struct OnDisk {
    params: String,
    rounds: Vec<RoundReport>,
}

pub fn cache_key(
    partition: &PartitionSpec,
    scope: &ScopeFilter,
    train: &TrainConfig,
    participants: &[u16],
) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        v: u32,
        partition: &'a PartitionSpec,
        scope: &'a ScopeFilter,
        train: &'a TrainConfig,
        participants: &'a [u16],
    }
    let json = serde_json::to_vec(&Key {
        v: 1,
        partition,
        scope,
        train,
        participants,
    })
    .expect("key serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Default)]
pub struct ModelCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, CachedModel>>,
}

impl ModelCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            mem: Mutex::default(),
        }
    }

    pub fn get(&self, key: &str) -> Option<CachedModel> {
        if let Some(m) = self.mem.lock().expect("cache lock").get(key) {
            return Some(m.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let text = std::fs::read_to_string(path).ok()?;
        let disk: OnDisk = serde_json::from_str(&text).ok()?;
        let bytes = hex::decode(disk.params).ok()?;
        let m = CachedModel {
            params: ModelParams::from_bytes(&bytes).ok()?,
            rounds: disk.rounds,
        };
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), m.clone());
        Some(m)
    }

    pub fn put(&self, key: &str, model: CachedModel) {
        if let Some(dir) = &self.dir {
            let disk = OnDisk {
                params: hex::encode(model.params.to_bytes()),
                rounds: model.rounds.clone(),
            };
            let write = std::fs::create_dir_all(dir).and_then(|_| {
                std::fs::write(
                    dir.join(format!("{key}.json")),
                    serde_json::to_vec(&disk).expect("cache entry serializes"),
                )
            });
            if let Err(e) = write {
                tracing::warn!(error = %e, "model cache write failed");
            }
        }
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), model);
    }
}
