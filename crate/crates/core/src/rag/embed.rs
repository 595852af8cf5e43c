//! Embedding and rerank backends.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::RagError;
use crate::text::content_tokens;

/// Maps texts to fixed-dimension vectors.
pub trait EmbeddingBackend: Send + Sync {
    fn dimension(&self) -> usize;
    /// True when the same text always yields the same vector.
    fn is_deterministic(&self) -> bool;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RagError>;
}

/// Scores (query, passage) pairs; higher is more relevant.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, passages: &[&str]) -> Result<Vec<f32>, RagError>;
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Hashed bag-of-words vectors: each content token adds 1 to bucket
/// `fnv1a(token) % dim`; the vector is L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashedBagOfWords {
    dim: usize,
}

impl HashedBagOfWords {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl EmbeddingBackend for HashedBagOfWords {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RagError> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; self.dim];
                for tok in content_tokens(t) {
                    v[(fnv1a(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
                }
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            })
            .collect())
    }
}

fn http_client() -> reqwest::blocking::Client {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(120))
        .build()
        .expect("http client builds")
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f32>,
}

/// Embeddings endpoint speaking `{"input": [...]}` → `{"data": [{"embedding": [...]}]}`.
pub struct HttpEmbedding {
    url: String,
    model: String,
    dim: usize,
    client: reqwest::blocking::Client,
}

impl HttpEmbedding {
    pub fn new(url: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        Self { url: url.into(), model: model.into(), dim, client: http_client() }
    }
}

impl EmbeddingBackend for HttpEmbedding {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, RagError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&json!({"model": self.model, "input": texts}))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| RagError::Backend(e.to_string()))?;
        let parsed: EmbeddingResponse = resp.json().map_err(|e| RagError::Backend(e.to_string()))?;
        let vecs: Vec<Vec<f32>> = parsed.data.into_iter().map(|d| d.embedding).collect();
        if vecs.len() != texts.len() {
            return Err(RagError::Backend(format!("expected {} embeddings, got {}", texts.len(), vecs.len())));
        }
        if let Some(bad) = vecs.iter().find(|v| v.len() != self.dim) {
            return Err(RagError::DimensionMismatch { expected: self.dim, found: bad.len() });
        }
        Ok(vecs)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RerankResponse {
    Wrapped { results: Vec<RerankItem> },
    Bare(Vec<RerankItem>),
}

#[derive(Deserialize)]
struct RerankItem {
    index: usize,
    #[serde(alias = "relevance_score")]
    score: f32,
}

/// Rerank endpoint taking `{"query", "documents"}` and answering with
/// `[{"index", "score"}]` or `{"results": [{"index", "relevance_score"}]}`.
pub struct HttpReranker {
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpReranker {
    pub fn new(url: impl Into<String>) -> Self {
        Self { url: url.into(), client: http_client() }
    }
}

impl Reranker for HttpReranker {
    fn rerank(&self, query: &str, passages: &[&str]) -> Result<Vec<f32>, RagError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&json!({"query": query, "documents": passages, "texts": passages}))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| RagError::Backend(e.to_string()))?;
        let items = match resp.json::<RerankResponse>().map_err(|e| RagError::Backend(e.to_string()))? {
            RerankResponse::Wrapped { results } => results,
            RerankResponse::Bare(items) => items,
        };
        let mut scores = vec![f32::NEG_INFINITY; passages.len()];
        for item in items {
            if let Some(s) = scores.get_mut(item.index) {
                *s = item.score;
            }
        }
        Ok(scores)
    }
}
