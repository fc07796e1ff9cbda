//! Experiment configuration (TOML) and cross-field validation.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use ramp_core::corpus::{AttributeValue, Task};
use ramp_core::embedding::EmbedderSpec;
use ramp_core::generation::GenerationParams;
use ramp_core::prompting::{supported_languages, PromptMode};
use ramp_core::retrieval::{allocate_crosslingual, RetrievalMode};
use ramp_core::text::digest_parts;
use serde::{Deserialize, Serialize};

pub const BACKEND_URL_ENV: &str = "RAMP_BACKEND_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub embedder: EmbedderSpec,
    #[serde(default)]
    pub backend: BackendSpec,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scorer: Option<ScorerSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Pool files; concatenated in order.
    pub train: Vec<PathBuf>,
    pub test: PathBuf,
    /// Optional JSON template overrides.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionKind {
    Similarity,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub task: Task,
    pub mode: PromptMode,
    /// In-context examples per prompt; 0 renders zero-shot prompts.
    pub k: usize,
    pub regime: RetrievalMode,
    /// Empty means every language present in the test file.
    #[serde(default)]
    pub target_langs: Vec<String>,
    /// Empty means both attributes of the task.
    #[serde(default)]
    pub attributes: Vec<AttributeValue>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Defaults to on for cross-lingual runs, off otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gating: Option<bool>,
    /// Derived from `mode` when absent; if given it must agree with it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection: Option<SelectionKind>,
    #[serde(default)]
    pub dedup_sources: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor_languages: Option<Vec<String>>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    EchoMock {
        #[serde(default)]
        canned: String,
    },
    TableMock {
        table: PathBuf,
    },
    Remote {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Remote { url: None, timeout_secs: default_timeout() }
    }
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSection {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub temperature: f32,
    #[serde(default = "default_stop")]
    pub stop: Vec<String>,
    #[serde(default = "default_model")]
    pub model_id: String,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_budget: Option<usize>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_ms")]
    pub retry_base_ms: u64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
            stop: default_stop(),
            model_id: default_model(),
            parallelism: default_parallelism(),
            char_budget: None,
            max_retries: default_retries(),
            retry_base_ms: default_retry_ms(),
        }
    }
}

impl GenerationSection {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
            stop_sequences: self.stop.clone(),
            model_id: self.model_id.clone(),
        }
    }
}

fn default_max_new_tokens() -> u32 {
    GenerationParams::default().max_new_tokens
}

fn default_stop() -> Vec<String> {
    GenerationParams::default().stop_sequences
}

fn default_model() -> String {
    GenerationParams::default().model_id
}

fn default_parallelism() -> usize {
    4
}

fn default_retries() -> u32 {
    3
}

fn default_retry_ms() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSection {
    pub url: String,
    #[serde(default)]
    pub comet: bool,
    #[serde(default)]
    pub classifier: bool,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

/// Settings that command-line flags can override.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backend_url: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub parallelism: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub enum ConfigError {
    Io(PathBuf, std::io::Error),
    Parse(String),
    Invalid(Vec<String>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            ConfigError::Parse(e) => write!(f, "config parse error: {e}"),
            ConfigError::Invalid(errors) => {
                write!(f, "{} config error(s):", errors.len())?;
                for e in errors {
                    write!(f, "\n  - {e}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads a config file. Relative data and output paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.train.iter_mut().for_each(fix);
        fix(&mut self.data.test);
        if let Some(t) = self.data.templates.as_mut() {
            fix(t);
        }
        fix(&mut self.experiment.output_dir);
        if let Some(c) = self.experiment.cache_dir.as_mut() {
            fix(c);
        }
        if let BackendSpec::TableMock { table } = &mut self.backend {
            fix(table);
        }
    }

    /// Flags win over the environment, which wins over the file.
    pub fn apply_overrides(&mut self, o: &Overrides) {
        if let BackendSpec::Remote { url, .. } = &mut self.backend {
            if let Some(u) = o.backend_url.clone().or_else(|| std::env::var(BACKEND_URL_ENV).ok().filter(|s| !s.is_empty())) {
                *url = Some(u);
            }
        }
        if let Some(c) = &o.cache_dir {
            self.experiment.cache_dir = Some(c.clone());
        }
        if let Some(p) = o.parallelism {
            self.generation.parallelism = p;
        }
        if let Some(s) = o.seed {
            self.experiment.seeds = vec![s];
        }
    }

    pub fn gating(&self) -> bool {
        self.experiment.gating.unwrap_or(self.experiment.regime == RetrievalMode::CrossLingual)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.experiment.cache_dir.clone().unwrap_or_else(|| self.experiment.output_dir.join("cache"))
    }

    pub fn attributes(&self) -> Vec<AttributeValue> {
        if self.experiment.attributes.is_empty() {
            self.experiment.task.attributes().to_vec()
        } else {
            self.experiment.attributes.clone()
        }
    }

    /// Seeds that produce distinct runs: similarity selection ignores seeds.
    pub fn effective_seeds(&self, mode: PromptMode) -> Vec<Option<u64>> {
        if mode.uses_similarity() {
            vec![None]
        } else {
            self.experiment.seeds.iter().map(|&s| Some(s)).collect()
        }
    }

    /// Stable digest of the parsed configuration.
    pub fn digest(&self) -> String {
        digest_parts([serde_json::to_string(self).expect("config serializes")])
    }

    /// Checks everything that can be checked without reading data files.
    /// Returns every problem found, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let e = &self.experiment;
        let task = e.task;

        match (e.mode.uses_similarity(), e.selection) {
            (true, Some(SelectionKind::Random)) => {
                errors.push("mode `ramp` requires similarity selection, but selection = \"random\"".to_string())
            }
            (false, Some(SelectionKind::Similarity)) => errors.push(format!(
                "mode `{}` requires random selection, but selection = \"similarity\"",
                e.mode
            )),
            _ => {}
        }
        if !e.mode.uses_similarity() && e.seeds.is_empty() {
            errors.push(format!("mode `{}` needs at least one seed", e.mode));
        }
        let unique: BTreeSet<_> = e.seeds.iter().collect();
        if unique.len() != e.seeds.len() {
            errors.push("seeds contain duplicates".to_string());
        }
        for a in &e.attributes {
            if a.task() != task {
                errors.push(format!("attribute `{a}` does not belong to task `{}`", task.as_str()));
            }
        }
        let known: BTreeSet<&str> = supported_languages().collect();
        for l in e.target_langs.iter().chain(e.donor_languages.iter().flatten()) {
            if !known.contains(l.as_str()) {
                errors.push(format!("unknown language code `{l}`"));
            }
        }
        if e.regime == RetrievalMode::CrossLingual && e.k > 0 {
            if let Some(donors) = &e.donor_languages {
                // Quotas are checked for every target language up front.
                let targets: Vec<&String> = e.target_langs.iter().collect();
                if targets.is_empty() {
                    if let Err(err) = check_quota(e.k, donors, "") {
                        errors.push(err);
                    }
                }
                for t in targets {
                    if let Err(err) = check_quota(e.k, donors, t) {
                        errors.push(format!("target `{t}`: {err}"));
                    }
                }
            }
        }
        if e.regime == RetrievalMode::SameLanguage && e.donor_languages.is_some() {
            errors.push("donor_languages only applies to the cross-lingual regime".to_string());
        }
        if self.data.train.is_empty() && e.k > 0 {
            errors.push("data.train lists no pool files".to_string());
        }
        if let Err(err) = self.generation.params().validate() {
            errors.push(err.to_string());
        }
        if self.generation.parallelism == 0 {
            errors.push("generation.parallelism must be >= 1".to_string());
        }
        if let Err(err) = self.embedder.validate() {
            errors.push(err.to_string());
        }
        match &self.backend {
            BackendSpec::Remote { url: None, .. } => errors.push(format!(
                "backend.kind = \"remote\" needs a URL (config, {BACKEND_URL_ENV}, or --backend-url)"
            )),
            BackendSpec::Remote { timeout_secs: 0, .. } => errors.push("backend.timeout_secs must be >= 1".to_string()),
            _ => {}
        }
        if let Some(s) = &self.scorer {
            if s.url.is_empty() {
                errors.push("scorer.url is empty".to_string());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }
}

pub fn check_quota(k: usize, donors: &[String], target: &str) -> Result<(), String> {
    allocate_crosslingual(k, donors, target).map(|_| ()).map_err(|e| e.to_string())
}
