//! Text embeddings for rows, columns, queries and documents.
//!
//! The local embedder hashes lowercased character trigrams into a fixed
//! number of buckets, weights them by term frequency and L2-normalizes. It
//! needs no model weights and is bit-stable across platforms. The remote
//! embedder talks to an embeddings endpoint and caches every vector by
//! `(model, text)` digest.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::table::Table;

pub const DEFAULT_DIM: usize = 256;
/// Texts per remote request.
pub const REMOTE_BATCH: usize = 64;
/// Environment variable holding the bearer token for remote providers.
pub const API_KEY_ENV: &str = "TABPROV_API_KEY";

const RETRIES: u32 = 3;

/// Unit-length vector, or the zero vector for blank text.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zeros(dim: usize) -> EmbeddingVector {
        EmbeddingVector(vec![0.0; dim])
    }

    /// Normalizes `values` to unit length (zero stays zero).
    pub fn normalized(mut values: Vec<f64>) -> EmbeddingVector {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}

/// Cosine similarity in `[-1, 1]`; 0 when either side is the zero vector.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderSpec {
    Local { dim: usize },
    Remote { endpoint: String, model: String },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Local { dim: DEFAULT_DIM }
    }
}

/// Hashed character-trigram embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalEmbedder {
    dim: usize,
}

impl LocalEmbedder {
    pub fn new(dim: usize) -> LocalEmbedder {
        LocalEmbedder { dim: dim.max(1) }
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        let norm: String = text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        if norm.is_empty() {
            return EmbeddingVector::zeros(self.dim);
        }
        let chars: Vec<char> = std::iter::once(' ')
            .chain(norm.chars())
            .chain(std::iter::once(' '))
            .collect();
        let mut counts = vec![0.0f64; self.dim];
        let mut buf = [0u8; 12];
        for w in chars.windows(3) {
            let mut len = 0;
            for c in w {
                len += c.encode_utf8(&mut buf[len..]).len();
            }
            counts[(fnv1a(&buf[..len]) % self.dim as u64) as usize] += 1.0;
        }
        EmbeddingVector::normalized(counts)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(serde::Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f64>,
}

/// Client for a remote embeddings endpoint.
#[derive(Debug)]
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    cache: Mutex<HashMap<[u8; 32], EmbeddingVector>>,
    requests: AtomicUsize,
    backoff: Duration,
}

impl RemoteEmbedder {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> RemoteEmbedder {
        RemoteEmbedder {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            cache: Mutex::new(HashMap::new()),
            requests: AtomicUsize::new(0),
            backoff: Duration::from_millis(200),
        }
    }

    /// Base delay of the exponential backoff between retries.
    pub fn with_backoff(mut self, base: Duration) -> RemoteEmbedder {
        self.backoff = base;
        self
    }

    /// HTTP requests issued so far, retries included.
    pub fn requests_issued(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn key(&self, text: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.model.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        h.finalize().into()
    }

    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let keys: Vec<_> = texts.iter().map(|t| self.key(t)).collect();
        let mut missing: Vec<String> = Vec::new();
        {
            let cache = self.cache.lock().expect("embedding cache poisoned");
            let mut seen = std::collections::HashSet::new();
            for (t, k) in texts.iter().zip(&keys) {
                if !cache.contains_key(k) && seen.insert(*k) {
                    missing.push(t.clone());
                }
            }
        }
        for chunk in missing.chunks(REMOTE_BATCH) {
            let vectors = self.fetch(chunk)?;
            let mut cache = self.cache.lock().expect("embedding cache poisoned");
            for (t, v) in chunk.iter().zip(vectors) {
                cache.insert(self.key(t), v);
            }
        }
        let cache = self.cache.lock().expect("embedding cache poisoned");
        Ok(keys.iter().map(|k| cache[k].clone()).collect())
    }

    fn fetch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = serde_json::to_string(&EmbedRequest {
            model: &self.model,
            input: texts,
        })?;
        let reply = post_json(
            &self.endpoint,
            self.api_key.as_deref(),
            &body,
            &self.requests,
            self.backoff,
        )?;
        let parsed: EmbedResponse = serde_json::from_str(&reply).map_err(|e| Error::Provider {
            endpoint: self.endpoint.clone(),
            status: None,
            message: format!("malformed embeddings response: {e}"),
        })?;
        if parsed.data.len() != texts.len() {
            return Err(Error::Provider {
                endpoint: self.endpoint.clone(),
                status: None,
                message: format!(
                    "expected {} embeddings, got {}",
                    texts.len(),
                    parsed.data.len()
                ),
            });
        }
        Ok(texts
            .iter()
            .zip(parsed.data)
            .map(|(t, d)| {
                if t.trim().is_empty() {
                    EmbeddingVector::zeros(d.embedding.len())
                } else {
                    EmbeddingVector::normalized(d.embedding)
                }
            })
            .collect())
    }
}

/// POSTs a JSON body, retrying with exponential backoff. Shared by the
/// embeddings and chat clients.
pub(crate) fn post_json(
    endpoint: &str,
    api_key: Option<&str>,
    body: &str,
    counter: &AtomicUsize,
    backoff: Duration,
) -> Result<String> {
    let mut last = None;
    for attempt in 0..=RETRIES {
        if attempt > 0 {
            std::thread::sleep(backoff * 2u32.pow(attempt - 1));
        }
        counter.fetch_add(1, Ordering::Relaxed);
        let mut req = ureq::post(endpoint).header("Content-Type", "application/json");
        if let Some(k) = api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        match req.send(body) {
            Ok(mut resp) => {
                return resp
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| Error::Provider {
                        endpoint: endpoint.to_owned(),
                        status: Some(resp.status().as_u16()),
                        message: e.to_string(),
                    });
            }
            Err(ureq::Error::StatusCode(code)) => {
                last = Some(Error::Provider {
                    endpoint: endpoint.to_owned(),
                    status: Some(code),
                    message: format!("HTTP status {code}"),
                });
            }
            Err(e) => {
                last = Some(Error::Provider {
                    endpoint: endpoint.to_owned(),
                    status: None,
                    message: e.to_string(),
                });
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Embedding provider chosen from an [`EmbedderSpec`].
#[derive(Debug)]
pub enum Embedder {
    Local(LocalEmbedder),
    Remote(RemoteEmbedder),
}

impl Default for Embedder {
    fn default() -> Self {
        Embedder::Local(LocalEmbedder::new(DEFAULT_DIM))
    }
}

impl Embedder {
    pub fn from_spec(spec: &EmbedderSpec) -> Embedder {
        match spec {
            EmbedderSpec::Local { dim } => Embedder::Local(LocalEmbedder::new(*dim)),
            EmbedderSpec::Remote { endpoint, model } => {
                Embedder::Remote(RemoteEmbedder::new(endpoint.clone(), model.clone()))
            }
        }
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        match self {
            Embedder::Local(l) => Ok(l.embed(text)),
            Embedder::Remote(r) => Ok(r.embed_batch(&[text.to_owned()])?.remove(0)),
        }
    }

    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        match self {
            Embedder::Local(l) => Ok(exec::map(texts, |t| l.embed(t))),
            Embedder::Remote(r) => r.embed_batch(texts),
        }
    }
}

pub fn embed_text(text: &str, embedder: &Embedder) -> Result<EmbeddingVector> {
    embedder.embed(text)
}

/// `"h1: v1 | h2: v2 | ..."` over leaf header labels.
pub fn flatten_row(table: &Table, row: usize) -> Result<String> {
    table.check_row(row)?;
    let labels = table.headers().leaf_labels();
    Ok(labels
        .iter()
        .zip(&table.rows()[row])
        .map(|(h, c)| format!("{h}: {}", c.text()))
        .collect::<Vec<_>>()
        .join(" | "))
}

/// `"h: v1 | v2 | ..."`.
pub fn flatten_column(table: &Table, col: usize) -> Result<String> {
    let cells = table.column(col)?;
    let label = table.headers().leaf_labels()[col];
    let values: Vec<&str> = cells.iter().map(|c| c.text()).collect();
    Ok(format!("{label}: {}", values.join(" | ")))
}

pub fn embed_row(table: &Table, row: usize, embedder: &Embedder) -> Result<EmbeddingVector> {
    embedder.embed(&flatten_row(table, row)?)
}

pub fn embed_column(table: &Table, col: usize, embedder: &Embedder) -> Result<EmbeddingVector> {
    embedder.embed(&flatten_column(table, col)?)
}

/// Embeddings of every row, in row order.
pub fn embed_rows(table: &Table, embedder: &Embedder) -> Result<Vec<EmbeddingVector>> {
    let texts = (0..table.row_count())
        .map(|r| flatten_row(table, r))
        .collect::<Result<Vec<_>>>()?;
    embedder.embed_batch(&texts)
}

/// Embeddings of every column, in column order.
pub fn embed_columns(table: &Table, embedder: &Embedder) -> Result<Vec<EmbeddingVector>> {
    let texts = (0..table.col_count())
        .map(|c| flatten_column(table, c))
        .collect::<Result<Vec<_>>>()?;
    embedder.embed_batch(&texts)
}
