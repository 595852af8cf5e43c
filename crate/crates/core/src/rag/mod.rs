//! Knowledge ingestion and retrieval: sliding-window chunks with provenance
//! metadata, pluggable embeddings, a flat vector index and optional reranking.

mod chunk;
mod embed;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_document, reassemble, Chunk};
pub use embed::{cosine, EmbeddingBackend, HashedBagOfWords, HttpEmbedding, HttpReranker, Reranker};

/// Default sliding window, in characters.
pub const DEFAULT_WINDOW: usize = 800;
/// Default stride between window starts, in characters.
pub const DEFAULT_STRIDE: usize = 600;

const VECTOR_MAGIC: &[u8; 4] = b"PCVI";
const CHUNKS_FILE: &str = "chunks.jsonl";
const VECTORS_FILE: &str = "vectors.f32";

#[derive(Debug, Error)]
pub enum RagError {
    #[error("stride {stride} must be in 1..={window} (window {window})")]
    InvalidWindow { window: usize, stride: usize },
    #[error("embedding dimension mismatch: index holds {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("chunk id {0:?} is already indexed")]
    DuplicateId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("embedding/rerank backend: {0}")]
    Backend(String),
    #[error("index file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitStage {
    Embed,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk: Chunk,
    pub score: f64,
    pub stage: HitStage,
}

/// Flat (exhaustive scan) vector index.
#[derive(Debug, Clone, Default)]
pub struct VectorIndex {
    dim: Option<usize>,
    chunks: Vec<Chunk>,
    vectors: Vec<Vec<f32>>,
    ids: HashSet<String>,
}

impl VectorIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.dim
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    /// Embeds and stores `chunks`. The batch is all-or-nothing.
    pub fn add(&mut self, chunks: Vec<Chunk>, backend: &dyn EmbeddingBackend) -> Result<usize, RagError> {
        if chunks.is_empty() {
            return Ok(0);
        }
        let dim = backend.dimension();
        if let Some(expected) = self.dim {
            if expected != dim {
                return Err(RagError::DimensionMismatch { expected, found: dim });
            }
        }
        let mut batch_ids = HashSet::new();
        for c in &chunks {
            if self.ids.contains(&c.chunk_id) || !batch_ids.insert(c.chunk_id.clone()) {
                return Err(RagError::DuplicateId(c.chunk_id.clone()));
            }
        }
        let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
        let vectors = backend.embed(&texts)?;
        if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
            return Err(RagError::DimensionMismatch { expected: dim, found: bad.len() });
        }
        let n = chunks.len();
        self.dim = Some(dim);
        self.ids.extend(batch_ids);
        self.chunks.extend(chunks);
        self.vectors.extend(vectors);
        Ok(n)
    }

    /// Cosine top-`k`, optionally re-scored by `reranker`.
    ///
    /// Hits are sorted by score, descending, with ties broken by ascending
    /// chunk id.
    pub fn retrieve(
        &self,
        query: &str,
        k: usize,
        backend: &dyn EmbeddingBackend,
        reranker: Option<&dyn Reranker>,
    ) -> Result<Vec<RetrievalHit>, RagError> {
        if self.is_empty() {
            return Err(RagError::EmptyIndex);
        }
        if k == 0 {
            return Err(RagError::ZeroK);
        }
        let q = backend.embed(&[query])?.pop().unwrap_or_default();
        if Some(q.len()) != self.dim {
            return Err(RagError::DimensionMismatch { expected: self.dim.unwrap_or(0), found: q.len() });
        }
        let mut hits: Vec<RetrievalHit> = self
            .chunks
            .iter()
            .zip(&self.vectors)
            .map(|(c, v)| RetrievalHit { chunk: c.clone(), score: f64::from(cosine(&q, v)), stage: HitStage::Embed })
            .collect();
        sort_hits(&mut hits);
        hits.truncate(k);
        if let Some(rr) = reranker {
            let passages: Vec<&str> = hits.iter().map(|h| h.chunk.text.as_str()).collect();
            let scores = rr.rerank(query, &passages)?;
            if scores.len() != hits.len() {
                return Err(RagError::Backend(format!("reranker returned {} scores for {} passages", scores.len(), hits.len())));
            }
            for (h, s) in hits.iter_mut().zip(scores) {
                h.score = f64::from(s);
                h.stage = HitStage::Rerank;
            }
            sort_hits(&mut hits);
        }
        Ok(hits)
    }

    /// Writes `chunks.jsonl` (metadata) and `vectors.f32` (flat little-endian
    /// floats after a `PCVI`, dim, count header) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), RagError> {
        std::fs::create_dir_all(dir)?;
        let mut meta = BufWriter::new(File::create(dir.join(CHUNKS_FILE))?);
        for c in &self.chunks {
            writeln!(meta, "{}", serde_json::to_string(c).expect("chunk serializes"))?;
        }
        meta.flush()?;
        let mut vec_out = BufWriter::new(File::create(dir.join(VECTORS_FILE))?);
        vec_out.write_all(VECTOR_MAGIC)?;
        vec_out.write_all(&(self.dim.unwrap_or(0) as u32).to_le_bytes())?;
        vec_out.write_all(&(self.vectors.len() as u32).to_le_bytes())?;
        for v in &self.vectors {
            for x in v {
                vec_out.write_all(&x.to_le_bytes())?;
            }
        }
        vec_out.flush()?;
        Ok(())
    }

    /// Loads an index written by [`VectorIndex::save`]; a missing directory is an empty index.
    pub fn load(dir: &Path) -> Result<Self, RagError> {
        let meta_path = dir.join(CHUNKS_FILE);
        if !meta_path.exists() {
            return Ok(Self::new());
        }
        let fmt_err = |path: &Path, reason: String| RagError::Format { path: path.to_path_buf(), reason };
        let mut chunks = Vec::new();
        for (i, line) in BufReader::new(File::open(&meta_path)?).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            chunks.push(
                serde_json::from_str::<Chunk>(&line).map_err(|e| fmt_err(&meta_path, format!("line {}: {e}", i + 1)))?,
            );
        }
        let vec_path = dir.join(VECTORS_FILE);
        let mut bytes = Vec::new();
        File::open(&vec_path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 12 || &bytes[..4] != VECTOR_MAGIC {
            return Err(fmt_err(&vec_path, "bad header".into()));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if count != chunks.len() || body.len() != dim * count * 4 {
            return Err(fmt_err(&vec_path, format!("{count} vectors of dim {dim} do not match {} chunks", chunks.len())));
        }
        let vectors: Vec<Vec<f32>> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect::<Vec<_>>()
            .chunks(dim.max(1))
            .map(<[f32]>::to_vec)
            .take(count)
            .collect();
        let ids = chunks.iter().map(|c| c.chunk_id.clone()).collect();
        Ok(Self { dim: (count > 0).then_some(dim), chunks, vectors, ids })
    }
}

fn sort_hits(hits: &mut [RetrievalHit]) {
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id)));
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_chunks(doc: &str, text: &str) -> Vec<Chunk> {
        chunk_document(doc, "intro", text, 400, 300).unwrap()
    }

    #[test]
    fn add_counts_and_rejects_duplicates() {
        let b = HashedBagOfWords::default();
        let mut idx = VectorIndex::new();
        let chunks = doc_chunks("d", &"word ".repeat(300));
        let n = chunks.len();
        assert_eq!(idx.add(chunks.clone(), &b).unwrap(), n);
        assert_eq!(idx.len(), n);
        assert_eq!(idx.add(vec![], &b).unwrap(), 0);
        assert!(matches!(idx.add(chunks[..1].to_vec(), &b), Err(RagError::DuplicateId(_))));
        assert_eq!(idx.len(), n);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut idx = VectorIndex::new();
        idx.add(doc_chunks("a", "alpha beta"), &HashedBagOfWords::new(16)).unwrap();
        let err = idx.add(doc_chunks("b", "gamma"), &HashedBagOfWords::new(32)).unwrap_err();
        assert!(matches!(err, RagError::DimensionMismatch { expected: 16, found: 32 }));
    }

    #[test]
    fn retrieve_on_empty_index() {
        let idx = VectorIndex::new();
        assert!(matches!(idx.retrieve("x", 1, &HashedBagOfWords::default(), None), Err(RagError::EmptyIndex)));
    }

    #[test]
    fn planted_needle_ranks_first() {
        let b = HashedBagOfWords::default();
        let mut idx = VectorIndex::new();
        for i in 0..99 {
            let noise = format!("routine maintenance log entry {i} lubrication schedule bearing vibration checked");
            idx.add(doc_chunks(&format!("noise{i:02}"), &noise), &b).unwrap();
        }
        idx.add(doc_chunks("needle", "The fouling resistance of exchanger HX-417 is 0.00035 m2K/W."), &b).unwrap();
        let hits = idx.retrieve("fouling resistance exchanger HX-417", 5, &b, None).unwrap();
        assert_eq!(hits.len(), 5);
        assert_eq!(hits[0].chunk.doc_id, "needle");
        assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(hits.iter().all(|h| h.stage == HitStage::Embed));
    }

    #[test]
    fn k_beyond_size_returns_all() {
        let b = HashedBagOfWords::default();
        let mut idx = VectorIndex::new();
        idx.add(doc_chunks("a", "pump"), &b).unwrap();
        idx.add(doc_chunks("b", "valve"), &b).unwrap();
        assert_eq!(idx.retrieve("pump", 10, &b, None).unwrap().len(), 2);
    }

    struct Reverse;
    impl Reranker for Reverse {
        fn rerank(&self, _q: &str, passages: &[&str]) -> Result<Vec<f32>, RagError> {
            Ok((0..passages.len()).map(|i| i as f32).collect())
        }
    }

    #[test]
    fn reranker_can_invert_order() {
        let b = HashedBagOfWords::default();
        let mut idx = VectorIndex::new();
        idx.add(doc_chunks("a", "steam steam steam boiler"), &b).unwrap();
        idx.add(doc_chunks("b", "steam boiler drum level"), &b).unwrap();
        idx.add(doc_chunks("c", "boiler"), &b).unwrap();
        let embed = idx.retrieve("steam", 3, &b, None).unwrap();
        let rerank = idx.retrieve("steam", 3, &b, Some(&Reverse)).unwrap();
        let e: Vec<_> = embed.iter().map(|h| h.chunk.chunk_id.clone()).collect();
        let mut r: Vec<_> = rerank.iter().map(|h| h.chunk.chunk_id.clone()).collect();
        r.reverse();
        assert_eq!(e, r);
        assert!(rerank.iter().all(|h| h.stage == HitStage::Rerank));
    }

    #[test]
    fn save_load_round_trip() {
        let b = HashedBagOfWords::default();
        let mut idx = VectorIndex::new();
        idx.add(doc_chunks("a", &"reactor kinetics ".repeat(60)), &b).unwrap();
        let dir = tempfile::tempdir().unwrap();
        idx.save(dir.path()).unwrap();
        let back = VectorIndex::load(dir.path()).unwrap();
        assert_eq!(back.chunks(), idx.chunks());
        assert_eq!(back.vectors, idx.vectors);
        assert_eq!(back.dimension(), Some(256));
        assert!(VectorIndex::load(&dir.path().join("missing")).unwrap().is_empty());
    }
}
