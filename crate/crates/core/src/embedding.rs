//! Text embeddings, cosine distance and similarity filtering.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use parking_lot::RwLock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::store::{normalize, Triple};

/// Default similarity gap for retrieval.
pub const DEFAULT_SIMILARITY_GAP: f64 = 0.55;
pub const HASH_EMBED_DIM: usize = 64;
pub const DEFAULT_HASH_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("non-finite vector entry")]
    NonFinite,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding endpoint error: {0}")]
    Remote(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        if values.iter().all(|&x| x == 0.0) {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        Self::new(self.0.iter().map(|x| x * factor).collect())
    }
}

/// Cosine distance `1 - u.v / (|u| |v|)`, clamped to `[0, 2]`.
pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch(u.dim(), v.dim()));
    }
    let dot: f64 = u.0.iter().zip(&v.0).map(|(a, b)| a * b).sum();
    let denom = u.norm() * v.norm();
    if denom == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((1.0 - dot / denom).clamp(0.0, 2.0))
}

/// Cosine similarity `u.v / (|u| |v|)`.
pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbedError> {
    cosine_distance(u, v).map(|d| 1.0 - d)
}

/// Keeps the candidates whose distance to `query` is at most `gap`, in input order.
pub fn similarity_filter<'a>(
    query: &EmbeddingVector,
    candidates: &'a [(Triple, EmbeddingVector)],
    gap: f64,
) -> Result<Vec<&'a Triple>, EmbedError> {
    let mut kept = Vec::new();
    for (triple, vec) in candidates {
        if cosine_distance(query, vec)? <= gap {
            kept.push(triple);
        }
    }
    Ok(kept)
}

/// Text embedded for a triple.
pub fn triple_text(t: &Triple) -> String {
    t.text()
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for Box<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

/// Deterministic bag-of-tokens embedder.
///
/// Each normalized whitespace token is hashed together with the seed into a
/// pseudo-random unit vector; a text embeds to the normalized mean of its
/// token vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_HASH_SEED)
    }
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let mut v: Vec<f64> = (0..HASH_EMBED_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let text = normalize(text);
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut sum = vec![0.0; HASH_EMBED_DIM];
        let mut count = 0usize;
        for token in text.split(' ') {
            for (acc, x) in sum.iter_mut().zip(self.token_vector(token)) {
                *acc += x;
            }
            count += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|x| x / count as f64).collect();
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        EmbeddingVector::new(mean.into_iter().map(|x| x / norm).collect())
    }
}

/// Memoizing wrapper. Keys are the exact input text.
#[derive(Debug)]
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if let Some(v) = self.cache.read().get(text) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = self.inner.embed(text)?;
        self.cache.write().insert(text.to_owned(), v.clone());
        Ok(v)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let missing: Vec<&str> = {
            let cache = self.cache.read();
            let mut seen = std::collections::HashSet::new();
            texts
                .iter()
                .copied()
                .filter(|t| !cache.contains_key(*t) && seen.insert(*t))
                .collect()
        };
        if !missing.is_empty() {
            let fresh = self.inner.embed_batch(&missing)?;
            let mut cache = self.cache.write();
            for (text, v) in missing.iter().zip(fresh) {
                cache.insert((*text).to_owned(), v);
            }
        }
        self.misses.fetch_add(missing.len() as u64, Ordering::Relaxed);
        self.hits
            .fetch_add((texts.len() - missing.len()) as u64, Ordering::Relaxed);
        let cache = self.cache.read();
        Ok(texts.iter().map(|t| cache[*t].clone()).collect())
    }
}

/// Client for an OpenAI-compatible `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
    retries: u32,
    backoff: Duration,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    input: &'a [&'a str],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub const BATCH_SIZE: usize = 64;
    pub const RETRIES: u32 = 3;

    /// `base_url` is the API root, e.g. `https://api.openai.com/v1`.
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Result<Self, EmbedError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| EmbedError::Remote(e.to_string()))?;
        Ok(Self {
            http,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_owned(),
            api_key,
            batch_size: Self::BATCH_SIZE,
            retries: Self::RETRIES,
            backoff: Duration::from_millis(500),
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn request_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let body = EmbeddingRequest { input: texts, model: &self.model };
        let mut attempt = 0;
        loop {
            match self.try_request(&body) {
                Ok(mut data) => {
                    if data.len() != texts.len() {
                        return Err(EmbedError::Remote(format!(
                            "expected {} embeddings, got {}",
                            texts.len(),
                            data.len()
                        )));
                    }
                    if data.iter().all(|d| d.index.is_some()) {
                        data.sort_by_key(|d| d.index);
                    }
                    return data
                        .into_iter()
                        .map(|d| EmbeddingVector::new(d.embedding))
                        .collect();
                }
                Err((err, transient)) if transient && attempt < self.retries => {
                    tracing::warn!(attempt, %err, "embedding request failed, retrying");
                    thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err((err, _)) => return Err(err),
            }
        }
    }

    fn try_request(
        &self,
        body: &EmbeddingRequest<'_>,
    ) -> Result<Vec<EmbeddingDatum>, (EmbedError, bool)> {
        let mut req = self.http.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (EmbedError::Remote(e.to_string()), true))?;
        let status = resp.status();
        if !status.is_success() {
            let transient = status.is_server_error() || status.as_u16() == 429;
            let text = resp.text().unwrap_or_default();
            return Err((EmbedError::Remote(format!("{status}: {text}")), transient));
        }
        resp.json::<EmbeddingResponse>()
            .map(|r| r.data)
            .map_err(|e| (EmbedError::Remote(e.to_string()), false))
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        Ok(self.request_batch(&[text])?.remove(0))
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.request_batch(chunk)?);
        }
        Ok(out)
    }
}
