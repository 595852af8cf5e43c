//! Record/replay store: append-only JSON lines `{"key": ..., "response": ...}`.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelBackend, ModelRequest, ModelResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub key: String,
    pub response: String,
}

/// Keyed model responses, optionally backed by a file.
///
/// Reads take a shared lock; appends are serialized.
#[derive(Debug, Default)]
pub struct ReplayStore {
    path: Option<PathBuf>,
    records: RwLock<HashMap<String, String>>,
    append_lock: Mutex<()>,
    lookups: AtomicUsize,
    hits: AtomicUsize,
}

impl ReplayStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the store at `path`. A missing file is an empty store that will
    /// be created on first append.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let mut records = HashMap::new();
        if path.exists() {
            let content = std::fs::read_to_string(&path)?;
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                    GatewayError::StoreFormat { line: i + 1, reason: e.to_string() }
                })?;
                records.insert(rec.key, rec.response);
            }
        }
        Ok(Self { path: Some(path), records: RwLock::new(records), ..Self::default() })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.lookups.fetch_add(1, Ordering::SeqCst);
        let found = self.records.read().expect("store lock").get(key).cloned();
        if found.is_some() {
            self.hits.fetch_add(1, Ordering::SeqCst);
        }
        found
    }

    /// Number of lookups served so far (hits and misses).
    pub fn lookup_count(&self) -> usize {
        self.lookups.load(Ordering::SeqCst)
    }

    pub fn hit_count(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    /// Appends a record; re-inserting an identical one is a no-op.
    pub fn insert(&self, key: impl Into<String>, response: impl Into<String>) -> Result<(), GatewayError> {
        let rec = ReplayRecord { key: key.into(), response: response.into() };
        let _guard = self.append_lock.lock().expect("append lock");
        if self.records.read().expect("store lock").get(&rec.key) == Some(&rec.response) {
            return Ok(());
        }
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(file, "{line}")?;
        }
        self.records.write().expect("store lock").insert(rec.key, rec.response);
        Ok(())
    }
}

/// Serves completions strictly from a [`ReplayStore`].
pub struct ReplayBackend {
    store: std::sync::Arc<ReplayStore>,
}

impl ReplayBackend {
    pub fn new(store: std::sync::Arc<ReplayStore>) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }
}

impl ModelBackend for ReplayBackend {
    fn id(&self) -> &str {
        "replay"
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let key = request.key();
        match self.store.get(&key) {
            Some(text) => Ok(ModelResponse { text, backend_id: "replay".into(), cached: true }),
            None => Err(GatewayError::ReplayMiss { key }),
        }
    }
}

/// Forwards to an inner backend and appends every response to the store.
pub struct RecordingBackend<B> {
    inner: B,
    store: std::sync::Arc<ReplayStore>,
}

impl<B: ModelBackend> RecordingBackend<B> {
    pub fn new(inner: B, store: std::sync::Arc<ReplayStore>) -> Self {
        Self { inner, store }
    }
}

impl<B: ModelBackend> ModelBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let response = self.inner.complete(request)?;
        self.store.insert(request.key(), response.text.clone())?;
        Ok(response)
    }
}
