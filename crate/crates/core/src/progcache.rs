//! Persistent store of programs that ran successfully, keyed by query.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::composer::Program;
use crate::planner::Query;
use crate::rag::{cosine, EmbeddingBackend, RagError};
use crate::text::sha256_hex;

pub const DEFAULT_THRESHOLD: f32 = 0.92;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("cache file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("similarity threshold {0} outside [0, 1]")]
    Threshold(f32),
    #[error(transparent)]
    Embedding(#[from] RagError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub signature: String,
    pub query_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
    pub program: Program,
    pub created_at: DateTime<Utc>,
    pub hit_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitKind {
    Exact,
    Similar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheHit {
    /// The entry after its hit count was bumped; the program is marked as
    /// served from the cache.
    pub entry: CacheEntry,
    pub kind: HitKind,
    pub similarity: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub with_embedding: usize,
    pub total_hits: u64,
}

/// Lowercase, collapse whitespace, strip trailing punctuation.
pub fn normalize_query(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_end_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_string()
}

pub fn signature(text: &str) -> String {
    sha256_hex(normalize_query(text).as_bytes())
}

/// Entries live in memory behind a read-write lock; every mutation rewrites
/// the backing file (one JSON entry per line) under an exclusive lock.
#[derive(Debug)]
pub struct ProgramCache {
    path: Option<PathBuf>,
    entries: RwLock<Vec<CacheEntry>>,
    write: Mutex<()>,
}

impl ProgramCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(Vec::new()), write: Mutex::new(()) }
    }

    /// Loads `path`; a missing file is an empty cache. Later lines replace
    /// earlier ones with the same signature.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let path = path.into();
        let mut entries: Vec<CacheEntry> = Vec::new();
        match fs::read_to_string(&path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let e: CacheEntry = serde_json::from_str(line)
                        .map_err(|err| CacheError::Format { line: i + 1, reason: err.to_string() })?;
                    entries.retain(|x| x.signature != e.signature);
                    entries.push(e);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(Self { path: Some(path), entries: RwLock::new(entries), write: Mutex::new(()) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn persist(&self, entries: &[CacheEntry]) -> Result<(), CacheError> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            for e in entries {
                serde_json::to_writer(&mut f, e).map_err(std::io::Error::other)?;
                f.write_all(b"\n")?;
            }
            f.sync_all()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Stores `program` for `query`, replacing any entry with the same
    /// signature. The caller vouches that the program ran successfully.
    pub fn put(&self, query: &Query, program: &Program, embed: Option<&dyn EmbeddingBackend>) -> Result<(), CacheError> {
        let embedding = match embed {
            Some(b) => b.embed(&[query.text.as_str()])?.pop(),
            None => None,
        };
        let entry = CacheEntry {
            signature: signature(&query.text),
            query_text: query.text.clone(),
            embedding,
            program: program.clone(),
            created_at: Utc::now(),
            hit_count: 0,
        };
        let _guard = self.write.lock().expect("cache write lock");
        let mut entries = self.entries.write().expect("cache entries lock");
        entries.retain(|e| e.signature != entry.signature);
        entries.push(entry);
        self.persist(&entries)
    }

    /// Exact signature first; otherwise the most similar embedded entry if
    /// its cosine reaches `threshold`, later entries winning ties.
    pub fn get(
        &self,
        query: &Query,
        embed: Option<&dyn EmbeddingBackend>,
        threshold: f32,
    ) -> Result<Option<CacheHit>, CacheError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(CacheError::Threshold(threshold));
        }
        let sig = signature(&query.text);
        let found = {
            let entries = self.entries.read().expect("cache entries lock");
            if let Some(i) = entries.iter().position(|e| e.signature == sig) {
                Some((i, HitKind::Exact, 1.0))
            } else if let Some(backend) = embed.filter(|_| entries.iter().any(|e| e.embedding.is_some())) {
                let q = backend.embed(&[query.text.as_str()])?.pop().unwrap_or_default();
                let mut best: Option<(usize, f32)> = None;
                for (i, e) in entries.iter().enumerate() {
                    let Some(v) = e.embedding.as_ref().filter(|v| v.len() == q.len()) else { continue };
                    let s = cosine(&q, v);
                    let better = match best {
                        None => true,
                        Some((j, bs)) => s > bs || (s == bs && e.created_at >= entries[j].created_at),
                    };
                    if better {
                        best = Some((i, s));
                    }
                }
                best.filter(|(_, s)| *s >= threshold).map(|(i, s)| (i, HitKind::Similar, s))
            } else {
                None
            }
        };
        let Some((i, kind, similarity)) = found else { return Ok(None) };
        let _guard = self.write.lock().expect("cache write lock");
        let mut entries = self.entries.write().expect("cache entries lock");
        let Some(e) = entries.get_mut(i) else { return Ok(None) };
        e.hit_count += 1;
        let mut entry = e.clone();
        self.persist(&entries)?;
        entry.program = entry.program.served_from_cache();
        Ok(Some(CacheHit { entry, kind, similarity }))
    }

    pub fn list(&self) -> Vec<CacheEntry> {
        self.entries.read().expect("cache entries lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache entries lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) -> Result<usize, CacheError> {
        let _guard = self.write.lock().expect("cache write lock");
        let mut entries = self.entries.write().expect("cache entries lock");
        let n = entries.len();
        entries.clear();
        self.persist(&entries)?;
        Ok(n)
    }

    pub fn stats(&self) -> CacheStats {
        let entries = self.entries.read().expect("cache entries lock");
        CacheStats {
            entries: entries.len(),
            with_embedding: entries.iter().filter(|e| e.embedding.is_some()).count(),
            total_hits: entries.iter().map(|e| e.hit_count).sum(),
        }
    }
}
