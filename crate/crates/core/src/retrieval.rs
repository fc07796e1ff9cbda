//! In-context example selection.
//!
//! Similarity selection scores every candidate against the query with
//! [`crate::embedding::dot`] and keeps the top `k`, most similar first. Ties
//! go to the earlier pool position. Cross-lingual selection splits `k`
//! evenly over donor languages (every pool language except the target),
//! retrieves per donor, then merges by similarity.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttributeExample, AttributeValue, ExamplePool};
use crate::embedding::{cached_embed, dot, embed_pool, EmbedError, EmbeddingCache, EmbeddingVector, TextEmbedder};
use crate::text::nfc;

const SNAPSHOT_MAGIC: &str = "RAMP-INDEX v1";

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot index an empty pool")]
    EmptyPool,
    #[error("no candidates for {0}")]
    NoCandidates(String),
    #[error("{total_k} in-context examples cannot be split evenly over {count} donor languages")]
    IndivisibleQuota { total_k: usize, count: usize },
    #[error("no donor languages left after excluding the target")]
    NoDonorLanguages,
    #[error("invalid retrieval config: {0}")]
    InvalidConfig(String),
    #[error("query has dimension {got}, index has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index snapshot was built with `{found}`, configured embedder is `{expected}`")]
    FingerprintMismatch { expected: String, found: String },
    #[error("index snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalMode {
    SameLanguage,
    CrossLingual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    Similarity,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub mode: RetrievalMode,
    pub target_lang: String,
    pub attribute: AttributeValue,
    pub selection: Selection,
    pub dedup_sources: bool,
    /// Donor order for cross-lingual mode. Defaults to the pool's languages
    /// in sorted order. The target language is always removed.
    pub donor_languages: Option<Vec<String>>,
}

impl RetrievalConfig {
    pub fn same_language(k: usize, target_lang: &str, attribute: AttributeValue) -> Self {
        Self {
            k,
            mode: RetrievalMode::SameLanguage,
            target_lang: target_lang.to_string(),
            attribute,
            selection: Selection::Similarity,
            dedup_sources: false,
            donor_languages: None,
        }
    }

    pub fn cross_lingual(k: usize, target_lang: &str, attribute: AttributeValue) -> Self {
        Self { mode: RetrievalMode::CrossLingual, ..Self::same_language(k, target_lang, attribute) }
    }

    pub fn with_selection(mut self, selection: Selection) -> Self {
        self.selection = selection;
        self
    }

    pub fn with_dedup(mut self, dedup: bool) -> Self {
        self.dedup_sources = dedup;
        self
    }

    pub fn with_donors(mut self, donors: Vec<String>) -> Self {
        self.donor_languages = Some(donors);
        self
    }

    fn validate(&self) -> Result<(), RetrievalError> {
        if self.k == 0 {
            return Err(RetrievalError::InvalidConfig("k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedExample {
    pub example: AttributeExample,
    /// Cosine similarity between the query and the example's source text.
    pub similarity: f32,
    /// 1-based.
    pub rank: usize,
    pub pool_position: usize,
}

/// Brute-force similarity index over a pool's source texts.
#[derive(Debug, Clone)]
pub struct SimilarityIndex {
    fingerprint: String,
    dim: usize,
    matrix: Vec<f32>,
    ids: Vec<String>,
    pool: Arc<ExamplePool>,
}

#[derive(Clone, Copy)]
struct Scored {
    similarity: f32,
    pos: usize,
}

fn by_similarity(a: &Scored, b: &Scored) -> Ordering {
    b.similarity.total_cmp(&a.similarity).then(a.pos.cmp(&b.pos))
}

impl SimilarityIndex {
    pub fn build(
        pool: Arc<ExamplePool>,
        embedder: &dyn TextEmbedder,
        cache: &EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        let vectors = embed_pool(&pool, embedder, cache)?;
        Self::from_vectors(pool, embedder.fingerprint(), &vectors)
    }

    pub fn from_vectors(
        pool: Arc<ExamplePool>,
        fingerprint: String,
        vectors: &[EmbeddingVector],
    ) -> Result<Self, RetrievalError> {
        if pool.is_empty() {
            return Err(RetrievalError::EmptyPool);
        }
        if vectors.len() != pool.len() {
            return Err(RetrievalError::InvalidConfig(format!(
                "{} vectors for {} examples",
                vectors.len(),
                pool.len()
            )));
        }
        let dim = vectors[0].dim();
        let mut matrix = Vec::with_capacity(dim * vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(RetrievalError::DimensionMismatch { expected: dim, got: v.dim() });
            }
            matrix.extend_from_slice(v.as_slice());
        }
        let ids = pool.examples().iter().map(|e| e.id.clone()).collect();
        Ok(Self { fingerprint, dim, matrix, ids, pool })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn pool(&self) -> &Arc<ExamplePool> {
        &self.pool
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.matrix[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Row-major matrix as little-endian float32 bytes.
    pub fn matrix_bytes(&self) -> Vec<u8> {
        self.matrix.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    fn check_query(&self, query: &EmbeddingVector) -> Result<(), RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        Ok(())
    }

    fn score(&self, query: &EmbeddingVector, pos: usize) -> f32 {
        dot(query.as_slice(), self.row(pos))
    }

    /// Candidate positions for a single-pool query under `config`'s filters.
    fn candidates(&self, config: &RetrievalConfig) -> Vec<usize> {
        match config.mode {
            RetrievalMode::SameLanguage => self
                .pool
                .positions_for_cell(&config.target_lang, config.attribute)
                .to_vec(),
            RetrievalMode::CrossLingual => self
                .pool
                .positions_for_attribute(config.attribute)
                .iter()
                .copied()
                .filter(|&p| self.pool.examples()[p].target_lang != config.target_lang)
                .collect(),
        }
    }

    fn describe(config: &RetrievalConfig, lang: &str) -> String {
        match config.mode {
            RetrievalMode::SameLanguage => format!("target_lang={lang}, attribute={}", config.attribute),
            RetrievalMode::CrossLingual => {
                format!("target_lang!={}, attribute={}", config.target_lang, config.attribute)
            }
        }
    }

    // Top `k` of `candidates` by similarity; with `seen`, skips sources
    // already taken.
    fn top_k(
        &self,
        query: &EmbeddingVector,
        candidates: &[usize],
        k: usize,
        seen: Option<&mut HashSet<String>>,
    ) -> Vec<Scored> {
        let mut scored: Vec<Scored> = candidates
            .iter()
            .map(|&pos| Scored { similarity: self.score(query, pos), pos })
            .collect();
        match seen {
            None => {
                if k < scored.len() {
                    scored.select_nth_unstable_by(k - 1, by_similarity);
                    scored.truncate(k);
                }
                scored.sort_by(by_similarity);
                scored
            }
            Some(seen) => {
                scored.sort_by(by_similarity);
                let mut out = Vec::with_capacity(k);
                for s in scored {
                    if out.len() == k {
                        break;
                    }
                    if seen.insert(nfc(&self.pool.examples()[s.pos].source_text)) {
                        out.push(s);
                    }
                }
                out
            }
        }
    }

    fn random_k(
        &self,
        query: &EmbeddingVector,
        candidates: &[usize],
        k: usize,
        rng: &mut ChaCha8Rng,
        mut seen: Option<&mut HashSet<String>>,
    ) -> Vec<Scored> {
        let mut order = candidates.to_vec();
        let mut out = Vec::with_capacity(k.min(order.len()));
        for i in 0..order.len() {
            if out.len() == k {
                break;
            }
            let j = rng.gen_range(i..order.len());
            order.swap(i, j);
            let pos = order[i];
            if let Some(seen) = seen.as_deref_mut() {
                if !seen.insert(nfc(&self.pool.examples()[pos].source_text)) {
                    continue;
                }
            }
            out.push(Scored { similarity: self.score(query, pos), pos });
        }
        out
    }

    fn ranked(&self, scored: Vec<Scored>) -> Vec<RankedExample> {
        scored
            .into_iter()
            .enumerate()
            .map(|(i, s)| RankedExample {
                example: self.pool.examples()[s.pos].clone(),
                similarity: s.similarity,
                rank: i + 1,
                pool_position: s.pos,
            })
            .collect()
    }

    /// Plain top-k over the candidates matching `config`'s language and
    /// attribute filters, ignoring quotas and the selection strategy.
    pub fn query_topk(
        &self,
        query: &EmbeddingVector,
        config: &RetrievalConfig,
    ) -> Result<Vec<RankedExample>, RetrievalError> {
        config.validate()?;
        self.check_query(query)?;
        let candidates = self.candidates(config);
        if candidates.is_empty() {
            return Err(RetrievalError::NoCandidates(Self::describe(config, &config.target_lang)));
        }
        let mut seen = HashSet::new();
        let seen = config.dedup_sources.then_some(&mut seen);
        Ok(self.ranked(self.top_k(query, &candidates, config.k, seen)))
    }

    /// Selects the in-context examples for one query.
    pub fn select_incontext(
        &self,
        query: &EmbeddingVector,
        config: &RetrievalConfig,
    ) -> Result<Vec<RankedExample>, RetrievalError> {
        config.validate()?;
        self.check_query(query)?;
        let mut rng = match config.selection {
            Selection::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Selection::Similarity => None,
        };
        let mut seen_set = HashSet::new();

        match config.mode {
            RetrievalMode::SameLanguage => {
                let candidates = self.candidates(config);
                if candidates.is_empty() {
                    return Err(RetrievalError::NoCandidates(Self::describe(config, &config.target_lang)));
                }
                let seen = config.dedup_sources.then_some(&mut seen_set);
                let picked = match rng.as_mut() {
                    None => self.top_k(query, &candidates, config.k, seen),
                    Some(rng) => self.random_k(query, &candidates, config.k, rng, seen),
                };
                Ok(self.ranked(picked))
            }
            RetrievalMode::CrossLingual => {
                let languages: Vec<String> = match &config.donor_languages {
                    Some(langs) => langs.clone(),
                    None => self.pool.languages().map(str::to_string).collect(),
                };
                let quotas = allocate_crosslingual(config.k, &languages, &config.target_lang)?;
                // (donor order, scored)
                let mut merged: Vec<(usize, Scored)> = Vec::with_capacity(config.k);
                for (donor_idx, (lang, quota)) in quotas.iter().enumerate() {
                    let candidates = self.pool.positions_for_cell(lang, config.attribute);
                    if candidates.is_empty() {
                        return Err(RetrievalError::NoCandidates(format!(
                            "target_lang={lang}, attribute={}",
                            config.attribute
                        )));
                    }
                    let seen = config.dedup_sources.then_some(&mut seen_set);
                    let picked = match rng.as_mut() {
                        None => self.top_k(query, candidates, *quota, seen),
                        Some(rng) => self.random_k(query, candidates, *quota, rng, seen),
                    };
                    merged.extend(picked.into_iter().map(|s| (donor_idx, s)));
                }
                if rng.is_none() {
                    merged.sort_by(|(da, a), (db, b)| {
                        b.similarity
                            .total_cmp(&a.similarity)
                            .then(da.cmp(db))
                            .then(a.pos.cmp(&b.pos))
                    });
                }
                Ok(self.ranked(merged.into_iter().map(|(_, s)| s).collect()))
            }
        }
    }

    /// Writes the index: a text header (magic, fingerprint, dim, count),
    /// one JSON-quoted id per line, then the raw little-endian float32 matrix.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let snap_err = |e: std::io::Error| RetrievalError::Snapshot(e.to_string());
        let mut out = Vec::with_capacity(self.matrix.len() * 4 + self.ids.len() * 16);
        writeln!(out, "{SNAPSHOT_MAGIC}").map_err(snap_err)?;
        writeln!(out, "fingerprint\t{}", self.fingerprint).map_err(snap_err)?;
        writeln!(out, "dim\t{}", self.dim).map_err(snap_err)?;
        writeln!(out, "count\t{}", self.ids.len()).map_err(snap_err)?;
        for id in &self.ids {
            let quoted = serde_json::to_string(id).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
            writeln!(out, "{quoted}").map_err(snap_err)?;
        }
        out.extend(self.matrix_bytes());
        if let Some(parent) = path.as_ref().parent() {
            fs::create_dir_all(parent).map_err(snap_err)?;
        }
        fs::write(path, out).map_err(snap_err)
    }

    /// Loads a snapshot, checking it against the embedder fingerprint and
    /// the pool's ids.
    pub fn load(
        path: impl AsRef<Path>,
        pool: Arc<ExamplePool>,
        expected_fingerprint: &str,
    ) -> Result<Self, RetrievalError> {
        let bad = |m: &str| RetrievalError::Snapshot(m.to_string());
        let file = fs::File::open(path).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut next_line = |reader: &mut BufReader<fs::File>| -> Result<String, RetrievalError> {
            line.clear();
            reader.read_line(&mut line).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
            Ok(line.trim_end_matches('\n').to_string())
        };
        if next_line(&mut reader)? != SNAPSHOT_MAGIC {
            return Err(bad("missing magic line"));
        }
        let field = |l: String, name: &str| -> Result<String, RetrievalError> {
            l.strip_prefix(name)
                .and_then(|r| r.strip_prefix('\t'))
                .map(str::to_string)
                .ok_or_else(|| RetrievalError::Snapshot(format!("expected `{name}` header")))
        };
        let fingerprint = field(next_line(&mut reader)?, "fingerprint")?;
        if fingerprint != expected_fingerprint {
            return Err(RetrievalError::FingerprintMismatch {
                expected: expected_fingerprint.to_string(),
                found: fingerprint,
            });
        }
        let dim: usize = field(next_line(&mut reader)?, "dim")?.parse().map_err(|_| bad("bad dim"))?;
        let count: usize = field(next_line(&mut reader)?, "count")?.parse().map_err(|_| bad("bad count"))?;
        if count != pool.len() {
            return Err(bad("snapshot size differs from pool"));
        }
        let mut ids = Vec::with_capacity(count);
        for (pos, ex) in pool.examples().iter().enumerate() {
            let id: String = serde_json::from_str(&next_line(&mut reader)?).map_err(|_| bad("bad id line"))?;
            if id != ex.id {
                return Err(RetrievalError::Snapshot(format!(
                    "id at row {pos} is `{id}`, pool has `{}`",
                    ex.id
                )));
            }
            ids.push(id);
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        if bytes.len() != count * dim * 4 {
            return Err(bad("matrix size does not match header"));
        }
        let matrix = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { fingerprint, dim, matrix, ids, pool })
    }
}

/// Equal per-language quotas for cross-lingual prompting.
///
/// `exclude` is removed from `languages`; `total_k` must divide evenly over
/// the remaining donors. Donor order is preserved.
pub fn allocate_crosslingual(
    total_k: usize,
    languages: &[String],
    exclude: &str,
) -> Result<Vec<(String, usize)>, RetrievalError> {
    let mut donors: Vec<&String> = Vec::new();
    for lang in languages {
        if lang != exclude && !donors.contains(&lang) {
            donors.push(lang);
        }
    }
    if donors.is_empty() {
        return Err(RetrievalError::NoDonorLanguages);
    }
    if !total_k.is_multiple_of(donors.len()) {
        return Err(RetrievalError::IndivisibleQuota { total_k, count: donors.len() });
    }
    let each = total_k / donors.len();
    Ok(donors.into_iter().map(|l| (l.clone(), each)).collect())
}

/// Index plus the embedder and cache needed to embed query text.
pub struct Retriever<'a> {
    pub index: &'a SimilarityIndex,
    pub embedder: &'a dyn TextEmbedder,
    pub cache: &'a EmbeddingCache,
}

impl<'a> Retriever<'a> {
    pub fn new(
        index: &'a SimilarityIndex,
        embedder: &'a dyn TextEmbedder,
        cache: &'a EmbeddingCache,
    ) -> Result<Self, RetrievalError> {
        if index.fingerprint() != embedder.fingerprint() {
            return Err(RetrievalError::FingerprintMismatch {
                expected: embedder.fingerprint(),
                found: index.fingerprint().to_string(),
            });
        }
        Ok(Self { index, embedder, cache })
    }

    pub fn embed_query(&self, input_text: &str) -> Result<EmbeddingVector, RetrievalError> {
        Ok(cached_embed(self.embedder, self.cache, input_text)?)
    }

    pub fn query_topk(&self, input_text: &str, config: &RetrievalConfig) -> Result<Vec<RankedExample>, RetrievalError> {
        self.index.query_topk(&self.embed_query(input_text)?, config)
    }

    pub fn select_incontext(
        &self,
        input_text: &str,
        config: &RetrievalConfig,
    ) -> Result<Vec<RankedExample>, RetrievalError> {
        self.index.select_incontext(&self.embed_query(input_text)?, config)
    }
}
