use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ProviderError;
use crate::jsonl::write_atomic;

/// Content-addressed store: one JSON file per digest under
/// `<root>/<namespace>/<first two hex chars>/<digest>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| ProviderError::Cache(format!("{}: {e}", root.display())))?;
        Ok(Self { root, locks: Arc::new(Mutex::new(HashMap::new())) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, namespace: &str, digest: &str) -> PathBuf {
        let shard = &digest[..digest.len().min(2)];
        self.root.join(namespace).join(shard).join(format!("{digest}.json"))
    }

    /// Per-key lock. Holding it across lookup, call and store keeps
    /// concurrent identical requests from reaching the backend twice.
    pub fn lock_for(&self, namespace: &str, digest: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks
            .entry(format!("{namespace}/{digest}"))
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    pub fn get<T: DeserializeOwned>(&self, namespace: &str, digest: &str) -> Result<Option<T>, ProviderError> {
        let path = self.path(namespace, digest);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ProviderError::Cache(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(ProviderError::Cache(format!("{}: {e}", path.display()))),
        }
    }

    pub fn put<T: Serialize>(&self, namespace: &str, digest: &str, entry: &T) -> Result<(), ProviderError> {
        let path = self.path(namespace, digest);
        let bytes = serde_json::to_vec_pretty(entry).map_err(|e| ProviderError::Cache(e.to_string()))?;
        write_atomic(&path, &bytes).map_err(|e| ProviderError::Cache(format!("{}: {e}", path.display())))
    }

    /// Number of stored entries in a namespace.
    pub fn len(&self, namespace: &str) -> usize {
        let dir = self.root.join(namespace);
        let Ok(shards) = fs::read_dir(dir) else { return 0 };
        shards
            .flatten()
            .filter_map(|s| fs::read_dir(s.path()).ok())
            .map(|files| files.flatten().filter(|f| f.path().extension().is_some_and(|x| x == "json")).count())
            .sum()
    }

    pub fn is_empty(&self, namespace: &str) -> bool {
        self.len(namespace) == 0
    }
}
