//! Sentence embeddings for retrieval.
//!
//! Two embedders implement [`TextEmbedder`]:
//!
//! * [`LocalHashedEmbedder`]: deterministic and offline. Lowercased NFC text
//!   is split on whitespace, each word is padded with one space on both
//!   sides, and every character n-gram (default n = 2, 3, 4) is hashed with
//!   64-bit FNV-1a. The n-gram adds `+1` (bit 63 clear) or `-1` (bit 63 set)
//!   to bucket `hash % dim`, and the count vector is L2-normalized.
//! * [`RemoteEmbedder`]: `POST {base}/embed` with
//!   `{"model": .., "texts": [..]}`, expecting `{"vectors": [[..]]}`.
//!
//! All vectors leaving this module have unit L2 norm.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ExamplePool;
use crate::text::{digest_parts, fnv1a64_from, nfc, FNV_OFFSET};

pub const DEFAULT_DIM: usize = 384;
pub const MIN_DIM: usize = 8;
pub const DEFAULT_NGRAM_SIZES: [usize; 3] = [2, 3, 4];
const REMOTE_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding backend unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("bad embedding response: {0}")]
    BadResponse(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid embedder spec: {0}")]
    InvalidSpec(String),
    #[error("embedding cache: {0}")]
    Cache(String),
    #[error("example `{id}`: {source}")]
    Example {
        id: String,
        #[source]
        source: Box<EmbedError>,
    },
}

/// A unit-norm, finite embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit length. Fails on non-finite entries or a
    /// zero vector.
    pub fn normalized(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::BadResponse("non-finite value".into()));
        }
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::BadResponse("zero vector".into()));
        }
        Ok(Self {
            values: values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect(),
        })
    }

    /// Wraps values that are already unit-norm (e.g. read back from a cache).
    pub(crate) fn from_unit(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }
}

/// Dot product with a fixed summation order. `dot(a, b)` and `dot(b, a)`
/// are bit-identical.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks_a = a.chunks_exact(8);
    let chunks_b = b.chunks_exact(8);
    let (rem_a, rem_b) = (chunks_a.remainder(), chunks_b.remainder());
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0f32;
    for (x, y) in rem_a.iter().zip(rem_b) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Cosine similarity of two unit vectors, i.e. their dot product.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f32, EmbedError> {
    if u.dim() != v.dim() {
        return Err(EmbedError::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    Ok(dot(u.as_slice(), v.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    LocalHashedNgram {
        dim: usize,
        ngram_sizes: Vec<usize>,
        seed: u64,
    },
    Remote {
        base_url: String,
        model: String,
        dim: usize,
    },
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::LocalHashedNgram {
            dim: DEFAULT_DIM,
            ngram_sizes: DEFAULT_NGRAM_SIZES.to_vec(),
            seed: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::LocalHashedNgram { dim, .. } | EmbedderSpec::Remote { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim() < MIN_DIM {
            return Err(EmbedError::InvalidSpec(format!("dim must be >= {MIN_DIM}, got {}", self.dim())));
        }
        match self {
            EmbedderSpec::LocalHashedNgram { ngram_sizes, .. } => {
                if ngram_sizes.is_empty() || ngram_sizes.contains(&0) {
                    return Err(EmbedError::InvalidSpec("n-gram sizes must be non-empty and positive".into()));
                }
            }
            EmbedderSpec::Remote { base_url, model, .. } => {
                if base_url.is_empty() || model.is_empty() {
                    return Err(EmbedError::InvalidSpec("remote embedder needs a URL and a model".into()));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn TextEmbedder>, EmbedError> {
        self.validate()?;
        Ok(match self {
            EmbedderSpec::LocalHashedNgram { dim, ngram_sizes, seed } => {
                Box::new(LocalHashedEmbedder::new(*dim, ngram_sizes.clone(), *seed))
            }
            EmbedderSpec::Remote { base_url, model, dim } => {
                Box::new(RemoteEmbedder::new(base_url.clone(), model.clone(), *dim))
            }
        })
    }
}

pub trait TextEmbedder: Send + Sync {
    /// Identifies everything that influences the produced vectors.
    fn fingerprint(&self) -> String;

    fn dim(&self) -> usize;

    /// Embeds each text independently; output order follows input order.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Number of texts this embedder has computed vectors for.
    fn calls(&self) -> u64;
}

pub fn embed(embedder: &dyn TextEmbedder, text: &str) -> Result<EmbeddingVector, EmbedError> {
    let mut out = embedder.embed_batch(&[text])?;
    out.pop().ok_or_else(|| EmbedError::BadResponse("empty batch result".into()))
}

#[derive(Debug)]
pub struct LocalHashedEmbedder {
    dim: usize,
    ngram_sizes: Vec<usize>,
    seed: u64,
    calls: AtomicU64,
}

impl LocalHashedEmbedder {
    pub fn new(dim: usize, ngram_sizes: Vec<usize>, seed: u64) -> Self {
        Self { dim, ngram_sizes, seed, calls: AtomicU64::new(0) }
    }

    fn hash_state(&self) -> u64 {
        if self.seed == 0 {
            FNV_OFFSET
        } else {
            fnv1a64_from(FNV_OFFSET, &self.seed.to_le_bytes())
        }
    }

    /// Signed bucket counts before normalization.
    pub fn counts(&self, text: &str) -> Vec<f64> {
        let mut counts = vec![0f64; self.dim];
        let state = self.hash_state();
        let lowered = nfc(text).to_lowercase();
        let mut buf = String::new();
        for word in lowered.split_whitespace() {
            let padded: Vec<char> = std::iter::once(' ')
                .chain(word.chars())
                .chain(std::iter::once(' '))
                .collect();
            for &n in &self.ngram_sizes {
                for gram in padded.windows(n) {
                    buf.clear();
                    buf.extend(gram);
                    let h = fnv1a64_from(state, buf.as_bytes());
                    let bucket = (h % self.dim as u64) as usize;
                    counts[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
                }
            }
        }
        counts
    }

    fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut counts = self.counts(text);
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every n-gram cancelled out; fall back to a single bucket keyed
            // by the whole text so the vector stays unit-norm
            let h = fnv1a64_from(self.hash_state(), nfc(text).to_lowercase().as_bytes());
            counts[(h % self.dim as u64) as usize] = 1.0;
            return Ok(EmbeddingVector::from_unit(counts.iter().map(|&c| c as f32).collect()));
        }
        Ok(EmbeddingVector::from_unit(counts.iter().map(|c| (c / norm) as f32).collect()))
    }
}

impl TextEmbedder for LocalHashedEmbedder {
    fn fingerprint(&self) -> String {
        let sizes: Vec<String> = self.ngram_sizes.iter().map(usize::to_string).collect();
        format!(
            "local-hashed-ngram/v1/dim={}/n={}/seed={}",
            self.dim,
            sizes.join(","),
            self.seed
        )
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let out = texts.iter().map(|t| self.embed_one(t)).collect::<Result<Vec<_>, _>>()?;
        self.calls.fetch_add(texts.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
}

/// Client for a remote embedding service.
pub struct RemoteEmbedder {
    base_url: String,
    model: String,
    dim: usize,
    agent: ureq::Agent,
    calls: AtomicU64,
}

impl RemoteEmbedder {
    pub fn new(base_url: String, model: String, dim: usize) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(60)).build();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            model,
            dim,
            agent,
            calls: AtomicU64::new(0),
        }
    }

    fn request(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/embed", self.base_url);
        let response = self
            .agent
            .post(&url)
            .send_json(EmbedRequest { model: &self.model, texts })
            .map_err(|e| EmbedError::RemoteUnavailable(e.to_string()))?;
        let body: EmbedResponse = response
            .into_json()
            .map_err(|e| EmbedError::BadResponse(e.to_string()))?;
        if body.vectors.len() != texts.len() {
            return Err(EmbedError::BadResponse(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                body.vectors.len()
            )));
        }
        body.vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::DimensionMismatch { expected: self.dim, got: v.len() });
                }
                EmbeddingVector::normalized(v)
            })
            .collect()
    }
}

impl TextEmbedder for RemoteEmbedder {
    fn fingerprint(&self) -> String {
        format!("remote/model={}/dim={}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(REMOTE_BATCH) {
            out.extend(self.request(chunk)?);
            self.calls.fetch_add(chunk.len() as u64, Ordering::Relaxed);
        }
        Ok(out)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Embedding cache keyed by SHA-256 of (embedder fingerprint, NFC text).
///
/// Optionally backed by an append-only file with one record per line:
/// `hex_key \t dim \t base64(float32 little-endian values)`.
#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, Vec<f32>>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a file-backed cache and loads its records. Later
    /// records for the same key win.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let cache_err = |e: std::io::Error| EmbedError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.is_empty() {
                    continue;
                }
                let (key, values) = decode_cache_record(&line)
                    .ok_or_else(|| EmbedError::Cache(format!("{}:{}: malformed record", path.display(), i + 1)))?;
                entries.insert(key, values);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(cache_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(cache_err)?;
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn key(fingerprint: &str, text: &str) -> String {
        digest_parts([fingerprint, nfc(text).as_str()])
    }

    pub fn get(&self, key: &str) -> Option<EmbeddingVector> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .map(|v| EmbeddingVector::from_unit(v.clone()))
    }

    pub fn insert(&self, key: String, vector: &EmbeddingVector) -> Result<(), EmbedError> {
        if let Some(file) = &self.file {
            let line = encode_cache_record(&key, vector.as_slice());
            let mut f = file.lock().expect("cache file lock poisoned");
            f.write_all(line.as_bytes())
                .map_err(|e| EmbedError::Cache(e.to_string()))?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, vector.as_slice().to_vec());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}

fn encode_cache_record(key: &str, values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    format!("{key}\t{}\t{}\n", values.len(), B64.encode(bytes))
}

fn decode_cache_record(line: &str) -> Option<(String, Vec<f32>)> {
    let mut parts = line.split('\t');
    let key = parts.next()?;
    let dim: usize = parts.next()?.parse().ok()?;
    let bytes = B64.decode(parts.next()?).ok()?;
    if parts.next().is_some() || bytes.len() != dim * 4 {
        return None;
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Some((key.to_string(), values))
}

/// Embeds `text` through the cache.
pub fn cached_embed(
    embedder: &dyn TextEmbedder,
    cache: &EmbeddingCache,
    text: &str,
) -> Result<EmbeddingVector, EmbedError> {
    let key = EmbeddingCache::key(&embedder.fingerprint(), text);
    if let Some(v) = cache.get(&key) {
        if v.dim() == embedder.dim() {
            return Ok(v);
        }
    }
    let v = embed(embedder, text)?;
    check_dim(embedder, &v)?;
    cache.insert(key, &v)?;
    Ok(v)
}

fn check_dim(embedder: &dyn TextEmbedder, v: &EmbeddingVector) -> Result<(), EmbedError> {
    if v.dim() != embedder.dim() {
        return Err(EmbedError::DimensionMismatch { expected: embedder.dim(), got: v.dim() });
    }
    Ok(())
}

/// Embeds every example's source text, one vector per example in pool order.
/// Each distinct source text is embedded at most once; cache hits are reused.
pub fn embed_pool(
    pool: &ExamplePool,
    embedder: &dyn TextEmbedder,
    cache: &EmbeddingCache,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let fingerprint = embedder.fingerprint();
    let keys: Vec<String> = pool
        .examples()
        .iter()
        .map(|ex| EmbeddingCache::key(&fingerprint, &ex.source_text))
        .collect();

    // first example position for each missing key
    let mut missing: Vec<usize> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (pos, key) in keys.iter().enumerate() {
        if cache.get(key).is_none_or(|v| v.dim() != embedder.dim()) && seen.insert(key.as_str()) {
            missing.push(pos);
        }
    }

    for chunk in missing.chunks(REMOTE_BATCH) {
        let texts: Vec<&str> = chunk
            .iter()
            .map(|&p| pool.examples()[p].source_text.as_str())
            .collect();
        let vectors = match embedder.embed_batch(&texts) {
            Ok(v) => v,
            Err(_) => embed_individually(pool, embedder, chunk)?,
        };
        for (&pos, v) in chunk.iter().zip(&vectors) {
            check_dim(embedder, v).map_err(|e| with_id(pool, pos, e))?;
            cache.insert(keys[pos].clone(), v)?;
        }
    }

    keys.iter()
        .enumerate()
        .map(|(pos, key)| cache.get(key).ok_or_else(|| with_id(pool, pos, EmbedError::Cache("entry vanished".into()))))
        .collect()
}

// Re-runs a failed batch one text at a time to name the offending example.
fn embed_individually(
    pool: &ExamplePool,
    embedder: &dyn TextEmbedder,
    positions: &[usize],
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    positions
        .iter()
        .map(|&p| embed(embedder, &pool.examples()[p].source_text).map_err(|e| with_id(pool, p, e)))
        .collect()
}

fn with_id(pool: &ExamplePool, pos: usize, e: EmbedError) -> EmbedError {
    EmbedError::Example { id: pool.examples()[pos].id.clone(), source: Box::new(e) }
}
