//! Exhaustive vector search over externally computed embeddings.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{RankedList, Retriever};
use crate::error::{Error, Result};
use crate::gateway::{post_json, sha256_hex, ResponseCache, RetryPolicy};
use crate::text::{truncate_back, QUERY_TOKEN_LIMIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    Dot,
    Cosine,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Row-major matrix of document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    doc_ids: Vec<String>,
    similarity: Similarity,
}

impl VectorIndex {
    pub fn build(entries: Vec<(String, Vec<f32>)>, similarity: Similarity) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Invalid("cannot index an empty collection".into()))?;
        if dim == 0 {
            return Err(Error::Invalid("zero-dimensional vectors".into()));
        }
        let mut vectors = Vec::with_capacity(dim * entries.len());
        let mut norms = Vec::with_capacity(entries.len());
        let mut doc_ids = Vec::with_capacity(entries.len());
        for (doc_id, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
            let n = norm(&v);
            if similarity == Similarity::Cosine && n == 0.0 {
                return Err(Error::Invalid(format!("zero vector for {doc_id} in cosine mode")));
            }
            norms.push(n);
            vectors.extend_from_slice(&v);
            doc_ids.push(doc_id);
        }
        Ok(Self { dim, vectors, norms, doc_ids, similarity })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn similarity(&self) -> Similarity {
        self.similarity
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn vector(&self, ordinal: usize) -> &[f32] {
        &self.vectors[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    /// Scores every document and keeps the top `k`, ties by doc_id.
    pub fn search(&self, query_id: &str, query: &[f32], k: usize) -> Result<RankedList> {
        if query.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, actual: query.len() });
        }
        let qn = norm(query);
        if self.similarity == Similarity::Cosine && qn == 0.0 {
            return Err(Error::ZeroVector);
        }
        let scores = (0..self.len()).map(|i| {
            let d = dot(query, self.vector(i));
            let s = match self.similarity {
                Similarity::Dot => d,
                Similarity::Cosine => d / (qn * self.norms[i]),
            };
            (self.doc_ids[i].clone(), s)
        });
        Ok(RankedList::from_scores(query_id, scores, k))
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Deterministic feature-hashing embedder for tests and offline runs.
///
/// Each lowercase alphanumeric token adds ±1 to a bucket chosen by its
/// SHA-256; texts sharing words therefore have similar vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash:{}", self.dim)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let lower = text.to_lowercase();
        let mut tokens: Vec<&str> = lower
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            tokens.push(text);
        }
        let mut v = vec![0f32; self.dim];
        for t in tokens {
            let h = Sha256::digest(t.as_bytes());
            let bucket = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        Ok(v)
    }
}

/// Embedding endpoint: POST `{"input": text}` → `{"embedding": [..]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    /// Expected dimension; responses of another length are rejected.
    pub dim: Option<usize>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            dim: None,
        }
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http-embed:{}", self.url)
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let resp = post_json(&self.url, self.api_key.as_deref(), self.timeout, &self.retry, &json!({ "input": text }))?;
        let v: Vec<f32> = resp
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or(Error::EmptyResponse)?
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Invalid("non-numeric embedding component".into()))?;
        if let Some(dim) = self.dim {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
        }
        Ok(v)
    }
}

/// Wraps an embedder with the on-disk response cache.
pub struct CachedEmbedder {
    inner: Box<dyn Embedder>,
    cache: ResponseCache,
}

impl CachedEmbedder {
    pub fn new(inner: Box<dyn Embedder>, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    fn key(&self, text: &str) -> String {
        let material = json!(["embed", self.inner.id(), text]);
        sha256_hex(material.to_string().as_bytes())
    }
}

impl Embedder for CachedEmbedder {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let key = self.key(text);
        if let Some(v) = self.cache.get_vector(&key) {
            return Ok(v);
        }
        let v = self.inner.embed(text)?;
        self.cache.put_vector(&key, &self.inner.id(), &v)?;
        Ok(v)
    }
}

pub struct DenseRetriever {
    pub index: VectorIndex,
    pub embedder: Box<dyn Embedder>,
}

impl DenseRetriever {
    pub fn new(index: VectorIndex, embedder: Box<dyn Embedder>) -> Self {
        Self { index, embedder }
    }
}

impl Retriever for DenseRetriever {
    fn search(&self, query_id: &str, query: &str, k: usize) -> Result<RankedList> {
        let v = self.embedder.embed(truncate_back(query, QUERY_TOKEN_LIMIT))?;
        self.index.search(query_id, &v, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn self_similarity_is_one() {
        let e = HashEmbedder::new(16);
        let entries: Vec<_> = ["alpha beta", "gamma", "delta epsilon", "zeta", "eta theta iota"]
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("d{}", i + 1), e.embed(t).unwrap()))
            .collect();
        let q = entries[4].1.clone();
        let idx = VectorIndex::build(entries, Similarity::Cosine).unwrap();
        let hits = idx.search("q", &q, 3).unwrap();
        assert_eq!(hits.hits[0].doc_id, "d5");
        assert!((hits.hits[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_scores_zero() {
        let idx = VectorIndex::build(vec![("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])], Similarity::Dot).unwrap();
        let hits = idx.search("q", &[1.0, 0.0], 2).unwrap();
        assert_eq!(hits.hits[1].doc_id, "b");
        assert_eq!(hits.hits[1].score, 0.0);
    }

    #[test]
    fn errors() {
        let idx = VectorIndex::build(vec![("a".into(), vec![1.0; 8])], Similarity::Cosine).unwrap();
        assert!(matches!(idx.search("q", &[1.0; 16], 1), Err(Error::DimensionMismatch { expected: 8, actual: 16 })));
        assert!(matches!(idx.search("q", &[0.0; 8], 1), Err(Error::ZeroVector)));
        assert!(VectorIndex::build(vec![("a".into(), vec![0.0; 4])], Similarity::Cosine).is_err());
    }

    #[test]
    fn hash_embedder_is_deterministic() {
        let e = HashEmbedder::new(32);
        assert_eq!(e.embed("abc").unwrap(), e.embed("abc").unwrap());
        assert_ne!(e.embed("abc").unwrap(), vec![0.0; 32]);
        assert_ne!(e.embed("...").unwrap(), vec![0.0; 32]);
    }

    struct Counting(AtomicUsize);

    impl Embedder for &'static Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn embed(&self, text: &str) -> Result<Vec<f32>> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![text.len() as f32, 0.1, -3.7e-3])
        }
    }

    #[test]
    fn cache_hit_is_identical() {
        static COUNTER: Counting = Counting(AtomicUsize::new(0));
        let dir = tempfile::tempdir().unwrap();
        let e = CachedEmbedder::new(Box::new(&COUNTER), ResponseCache::new(dir.path()).unwrap());
        let a = e.embed("hello").unwrap();
        let b = e.embed("hello").unwrap();
        assert_eq!(a, b);
        assert_eq!(COUNTER.0.load(Ordering::SeqCst), 1);
    }
}
