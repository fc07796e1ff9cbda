//! Completion backends, response caching and batch dispatch.
//!
//! The remote protocol is `POST {base}/v1/complete` with
//! `{"model", "prompt", "max_tokens", "temperature", "stop"}` and a
//! `{"text": ..}` response. Responses are cached by
//! (prompt digest, params fingerprint, backend id), so replaying an
//! experiment issues no backend traffic.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::TaskTemplate;
use crate::text::{digest_parts, escape_field, sha256_hex, unescape_field};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_new_tokens: u32,
    pub temperature: f32,
    pub stop_sequences: Vec<String>,
    pub model_id: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            temperature: 0.0,
            stop_sequences: vec!["\n".to_string()],
            model_id: "default".to_string(),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.max_new_tokens == 0 {
            return Err(GenerationError::InvalidParams("max_new_tokens must be >= 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GenerationError::InvalidParams("temperature must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let mut parts = vec![
            self.model_id.clone(),
            self.max_new_tokens.to_string(),
            self.temperature.to_bits().to_string(),
        ];
        parts.extend(self.stop_sequences.iter().cloned());
        digest_parts(parts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub prompt_digest: String,
    pub params: GenerationParams,
    pub raw_completion: String,
    pub extracted_translation: String,
    pub backend: String,
    pub latency_ms: u64,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend timed out")]
    Timeout,
    #[error("backend rejected the request: {0}")]
    Rejected(String),
}

impl BackendError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Unavailable(_) | BackendError::Timeout => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::Rejected(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("prompt has {chars} characters, budget is {budget}")]
    PromptTooLong { chars: usize, budget: usize },
    #[error("invalid generation params: {0}")]
    InvalidParams(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("all {count} batch items failed; first error: {first}")]
    AllFailed { count: usize, first: Box<GenerationError> },
}

pub trait Backend: Send + Sync {
    /// Stable identifier, part of the response cache key.
    fn id(&self) -> String;

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError>;
}

/// Returns the same canned completion for every prompt.
pub struct EchoBackend {
    canned: String,
}

impl EchoBackend {
    pub fn new(canned: impl Into<String>) -> Self {
        Self { canned: canned.into() }
    }
}

impl Backend for EchoBackend {
    fn id(&self) -> String {
        format!("echo-mock:{}", &sha256_hex(self.canned.as_bytes())[..16])
    }

    fn complete(&self, _prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        Ok(self.canned.clone())
    }
}

/// Returns programmed completions keyed by prompt digest.
#[derive(Default)]
pub struct TableBackend {
    table: HashMap<String, String>,
    name: String,
}

impl TableBackend {
    pub fn new(name: impl Into<String>) -> Self {
        Self { table: HashMap::new(), name: name.into() }
    }

    pub fn insert_prompt(&mut self, prompt: &str, completion: impl Into<String>) {
        self.table.insert(prompt_digest(prompt), completion.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, completion: impl Into<String>) {
        self.table.insert(digest.into(), completion.into());
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    /// Reads `digest \t completion` lines (completion escaped like pool fields).
    pub fn from_file(name: impl Into<String>, path: impl AsRef<Path>) -> Result<Self, GenerationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenerationError::Cache(format!("{}: {e}", path.display())))?;
        let mut backend = Self::new(name);
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (digest, completion) = line
                .split_once('\t')
                .ok_or_else(|| GenerationError::Cache(format!("{}:{}: expected two fields", path.display(), i + 1)))?;
            let completion = unescape_field(completion)
                .map_err(|e| GenerationError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
            backend.insert_digest(digest, completion);
        }
        Ok(backend)
    }

    pub fn to_file_contents(&self) -> String {
        let mut entries: Vec<_> = self.table.iter().collect();
        entries.sort();
        entries
            .into_iter()
            .map(|(d, c)| format!("{d}\t{}\n", escape_field(c)))
            .collect()
    }
}

impl Backend for TableBackend {
    fn id(&self) -> String {
        format!("table-mock:{}", self.name)
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, BackendError> {
        let digest = prompt_digest(prompt);
        self.table
            .get(&digest)
            .cloned()
            .ok_or_else(|| BackendError::Rejected(format!("no completion programmed for prompt {digest}")))
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f32,
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompleteResponse {
    text: String,
}

pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let base_url: String = base_url.into();
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        // the model id lives in the params fingerprint; the host does not
        // change what a deterministic model returns
        "remote".to_string()
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let url = format!("{}/v1/complete", self.base_url);
        let request = CompleteRequest {
            model: &params.model_id,
            prompt,
            max_tokens: params.max_new_tokens,
            temperature: params.temperature,
            stop: &params.stop_sequences,
        };
        match self.agent.post(&url).send_json(&request) {
            Ok(resp) => resp
                .into_json::<CompleteResponse>()
                .map(|r| r.text)
                .map_err(|e| BackendError::Rejected(format!("malformed response: {e}"))),
            Err(ureq::Error::Status(status, resp)) => {
                let body: String = resp.into_string().unwrap_or_default().chars().take(200).collect();
                Err(BackendError::Status { status, body })
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(BackendError::Timeout)
                } else {
                    Err(BackendError::Unavailable(msg))
                }
            }
        }
    }
}

pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

/// Cuts a completion down to the translation: at the first newline, the
/// start of a new pseudo-block, or the task's marking sentence, whichever
/// comes first; then trims whitespace.
pub fn extract_translation(raw_completion: &str, template: &TaskTemplate) -> String {
    let mut end = raw_completion.find('\n').unwrap_or(raw_completion.len());
    for marker in template.stop_markers() {
        if marker.is_empty() {
            continue;
        }
        if let Some(i) = raw_completion[..end].find(marker.as_str()) {
            end = i;
        }
    }
    raw_completion[..end].trim().to_string()
}

type CacheKey = (String, String, String);

/// Completion cache with an optional append-only file:
/// `prompt_digest \t params_fp \t backend \t base64(raw_completion)`.
#[derive(Default)]
pub struct ResponseCache {
    entries: RwLock<HashMap<CacheKey, String>>,
    file: Option<Mutex<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, GenerationError> {
        let path = path.as_ref();
        let err = |e: std::io::Error| GenerationError::Cache(format!("{}: {e}", path.display()));
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(err)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(err)?;
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                let decoded = (fields.len() == 4)
                    .then(|| B64.decode(fields[3]).ok())
                    .flatten()
                    .and_then(|b| String::from_utf8(b).ok())
                    .ok_or_else(|| GenerationError::Cache(format!("{}:{}: malformed record", path.display(), i + 1)))?;
                entries.insert((fields[0].into(), fields[1].into(), fields[2].into()), decoded);
            }
        } else if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        Ok(Self { entries: RwLock::new(entries), file: Some(Mutex::new(file)) })
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn insert(&self, key: CacheKey, raw: &str) -> Result<(), GenerationError> {
        if let Some(file) = &self.file {
            let line = format!("{}\t{}\t{}\t{}\n", key.0, key.1, key.2, B64.encode(raw));
            file.lock()
                .expect("cache file lock poisoned")
                .write_all(line.as_bytes())
                .map_err(|e| GenerationError::Cache(e.to_string()))?;
        }
        self.entries.write().expect("cache lock poisoned").insert(key, raw.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(250) }
    }
}

/// Dispatches prompts to a backend through the response cache.
pub struct Generator {
    backend: Arc<dyn Backend>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    char_budget: Option<usize>,
    backend_calls: AtomicU64,
}

impl Generator {
    pub fn new(backend: Arc<dyn Backend>, cache: Arc<ResponseCache>) -> Self {
        Self {
            backend,
            cache,
            retry: RetryPolicy::default(),
            char_budget: None,
            backend_calls: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Rejects prompts longer than `budget` characters before dispatch.
    pub fn with_char_budget(mut self, budget: Option<usize>) -> Self {
        self.char_budget = budget;
        self
    }

    /// Backend requests issued so far, retries included.
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn generate(
        &self,
        prompt: &str,
        params: &GenerationParams,
        template: &TaskTemplate,
    ) -> Result<GenerationRecord, GenerationError> {
        params.validate()?;
        let digest = prompt_digest(prompt);
        let backend = self.backend.id();
        let key = (digest.clone(), params.fingerprint(), backend.clone());
        let record = |raw: String, latency_ms: u64, cached: bool| GenerationRecord {
            prompt_digest: digest.clone(),
            params: params.clone(),
            extracted_translation: extract_translation(&raw, template),
            raw_completion: raw,
            backend: backend.clone(),
            latency_ms,
            cached,
        };
        if let Some(raw) = self.cache.get(&key) {
            return Ok(record(raw, 0, true));
        }
        if let Some(budget) = self.char_budget {
            let chars = prompt.chars().count();
            if chars > budget {
                return Err(GenerationError::PromptTooLong { chars, budget });
            }
        }
        let started = Instant::now();
        let raw = self.complete_with_retry(prompt, params)?;
        let latency_ms = started.elapsed().as_millis() as u64;
        self.cache.insert(key, &raw)?;
        Ok(record(raw, latency_ms, false))
    }

    fn complete_with_retry(&self, prompt: &str, params: &GenerationParams) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.complete(prompt, params) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && attempt < self.retry.max_retries => {
                    let delay = self.retry.base_delay * 2u32.pow(attempt);
                    log::debug!("transient backend error ({e}); retry {} in {delay:?}", attempt + 1);
                    thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Generates for every prompt with at most `parallelism` requests in
    /// flight. Output order follows input order. Item failures are kept
    /// per item; the batch only fails when every item failed.
    pub fn run_batch(
        &self,
        prompts: &[String],
        params: &GenerationParams,
        template: &TaskTemplate,
        parallelism: usize,
    ) -> Result<Vec<Result<GenerationRecord, GenerationError>>, GenerationError> {
        if parallelism == 0 {
            return Err(GenerationError::InvalidParams("parallelism must be >= 1".into()));
        }
        let slots: Vec<Mutex<Option<Result<GenerationRecord, GenerationError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        thread::scope(|scope| {
            for _ in 0..parallelism.min(prompts.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= prompts.len() {
                        break;
                    }
                    let result = self.generate(&prompts[i], params, template);
                    *slots[i].lock().expect("slot lock poisoned") = Some(result);
                });
            }
        });
        let results: Vec<_> = slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock poisoned").expect("every slot filled"))
            .collect();
        if !results.is_empty() && results.iter().all(Result::is_err) {
            let first = results.into_iter().find_map(Result::err).expect("non-empty");
            return Err(GenerationError::AllFailed { count: prompts.len(), first: Box::new(first) });
        }
        Ok(results)
    }
}
