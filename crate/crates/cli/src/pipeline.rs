//! The experiment pipeline: ingest, index, prompt, generate, evaluate, report.
//!
//! Every stage writes its artifacts under the output directory and records
//! the digest of its inputs in the run manifest. A stage whose inputs are
//! unchanged and whose artifacts still exist is skipped on the next run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ramp_core::corpus::{parse_pool, write_pool, AttributeExample, AttributeValue, ExamplePool};
use ramp_core::embedding::{EmbeddingCache, TextEmbedder};
use ramp_core::evaluation::{
    aggregate_report, attach_scores, average_reports, judge_segment, EvalReport, Grouping, LanguageIdentifier,
    RemoteScorer, ReportRow, ScorePair, ScorerKind, SegmentJudgment,
};
use ramp_core::generation::{
    prompt_digest, Backend, EchoBackend, Generator, RemoteBackend, ResponseCache, RetryPolicy, TableBackend,
};
use ramp_core::prompting::{language_name, render_prompt, PromptMode, RenderedPrompt, TemplateSet};
use ramp_core::retrieval::{allocate_crosslingual, RetrievalConfig, RetrievalMode, Retriever, SimilarityIndex};
use ramp_core::text::{digest_parts, sha256_hex};
use serde::{Deserialize, Serialize};

use crate::config::{BackendSpec, ExperimentConfig};
use crate::error::CliError;
use crate::manifest::{RunManifest, SettingRecord, StageRecord};

/// Parsed pools after task and cell filtering.
pub struct Data {
    pub pool: Arc<ExamplePool>,
    pub test: ExamplePool,
    /// Positions of the test rows this experiment covers, in file order.
    pub rows: Vec<usize>,
    pub pool_digest: String,
    pub test_digest: String,
}

fn read_pool(path: &Path) -> Result<ExamplePool, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_pool(&bytes[..]).map_err(|errors| CliError::Pool { path: path.to_path_buf(), errors })
}

impl Data {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let task = cfg.experiment.task;
        let mut train = Vec::new();
        for path in &cfg.data.train {
            let pool = read_pool(path)?;
            let before = pool.len();
            train.extend(pool.examples().iter().filter(|ex| ex.task() == task).cloned());
            log::info!("{}: {} rows, {} for task {}", path.display(), before, train.len(), task.as_str());
        }
        let pool = ExamplePool::from_examples(train)
            .map_err(|errors| CliError::Data(format!("train pools: {errors}")))?;
        let test = read_pool(&cfg.data.test)?;
        let test = ExamplePool::from_examples(test.examples().iter().filter(|ex| ex.task() == task).cloned().collect())
            .map_err(|errors| CliError::Data(format!("{}: {errors}", cfg.data.test.display())))?;

        let langs: BTreeSet<&str> = cfg.experiment.target_langs.iter().map(String::as_str).collect();
        let attributes = cfg.attributes();
        let rows = test
            .examples()
            .iter()
            .enumerate()
            .filter(|(_, ex)| langs.is_empty() || langs.contains(ex.target_lang.as_str()))
            .filter(|(_, ex)| attributes.contains(&ex.attribute))
            .map(|(pos, _)| pos)
            .collect();
        Ok(Data {
            pool_digest: sha256_hex(write_pool(&pool).as_bytes()),
            test_digest: sha256_hex(write_pool(&test).as_bytes()),
            pool: Arc::new(pool),
            test,
            rows,
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = &AttributeExample> {
        self.rows.iter().map(|&p| &self.test.examples()[p])
    }

    /// Problems that only show up once the data is read, for a given k.
    pub fn problems(&self, cfg: &ExperimentConfig, k: usize) -> Vec<String> {
        let mut errors = Vec::new();
        let e = &cfg.experiment;
        if self.rows.is_empty() {
            errors.push(format!(
                "{}: no test rows for task {} with the configured languages and attributes",
                cfg.data.test.display(),
                e.task.as_str()
            ));
        }
        for lang in &e.target_langs {
            if self.test.positions_for_lang(lang).is_empty() {
                errors.push(format!("target language `{lang}` has no test rows"));
            }
        }
        let mut unsupported = BTreeSet::new();
        for lang in self.rows().map(|r| r.target_lang.as_str()).chain(self.pool.languages()) {
            if language_name(lang).is_err() {
                unsupported.insert(lang.to_string());
            }
        }
        for lang in unsupported {
            errors.push(format!("language `{lang}` has no prompt name"));
        }
        if k == 0 {
            return errors;
        }
        if self.pool.is_empty() {
            errors.push("train pool has no rows for this task".to_string());
            return errors;
        }
        let cells: BTreeSet<(&str, AttributeValue)> =
            self.rows().map(|r| (r.target_lang.as_str(), r.attribute)).collect();
        match e.regime {
            RetrievalMode::SameLanguage => {
                for (lang, attr) in &cells {
                    if self.pool.positions_for_cell(lang, *attr).is_empty() {
                        errors.push(format!("train pool has no `{lang}`/{attr} examples"));
                    }
                }
            }
            RetrievalMode::CrossLingual => {
                let donors: Vec<String> = match &e.donor_languages {
                    Some(d) => d.clone(),
                    None => self.pool.languages().map(str::to_string).collect(),
                };
                let targets: BTreeSet<&str> = cells.iter().map(|(l, _)| *l).collect();
                for target in targets {
                    match allocate_crosslingual(k, &donors, target) {
                        Err(err) => errors.push(format!("target `{target}`, k={k}: {err}")),
                        Ok(quotas) => {
                            for (donor, _) in quotas {
                                for (_, attr) in cells.iter().filter(|(l, _)| *l == target) {
                                    if self.pool.positions_for_cell(&donor, *attr).is_empty() {
                                        errors.push(format!(
                                            "target `{target}`: donor `{donor}` has no {attr} examples"
                                        ));
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        errors.dedup();
        errors
    }
}

pub fn load_templates(cfg: &ExperimentConfig) -> Result<TemplateSet, CliError> {
    let set = TemplateSet::default();
    match &cfg.data.templates {
        None => Ok(set),
        Some(path) => {
            let json = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            Ok(set.with_overrides_json(&json)?)
        }
    }
}

pub fn build_backend(cfg: &ExperimentConfig) -> Result<Arc<dyn Backend>, CliError> {
    Ok(match &cfg.backend {
        BackendSpec::EchoMock { canned } => Arc::new(EchoBackend::new(canned.clone())),
        BackendSpec::TableMock { table } => {
            // Named after the table contents so reprogramming invalidates cached responses.
            let bytes = fs::read(table).map_err(|e| CliError::io(table, e))?;
            let name = sha256_hex(&bytes)[..16].to_string();
            Arc::new(TableBackend::from_file(name, table)?)
        }
        BackendSpec::Remote { url, timeout_secs } => {
            let url = url.clone().ok_or_else(|| CliError::Validation(vec!["remote backend has no URL".into()]))?;
            Arc::new(RemoteBackend::new(url, Duration::from_secs(*timeout_secs)))
        }
    })
}

/// Seed for one query's random selection, derived from the run seed and the
/// row id so that rows do not share a sample.
pub fn query_seed(run_seed: u64, id: &str) -> u64 {
    let d = digest_parts([run_seed.to_string().as_bytes(), id.as_bytes()]);
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}

pub fn run_tag(mode: PromptMode, k: usize, seed: Option<u64>) -> String {
    match seed {
        Some(s) => format!("{mode}-k{k}-seed{s}"),
        None => format!("{mode}-k{k}"),
    }
}

pub fn setting_name(mode: PromptMode, k: usize) -> String {
    format!("{mode}-k{k}")
}

pub struct PlannedPrompt {
    pub row: AttributeExample,
    pub prompt: RenderedPrompt,
}

/// One line of `generations-{tag}.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub id: String,
    pub target_lang: String,
    pub attribute: AttributeValue,
    pub prompt: String,
    pub prompt_digest: String,
    pub input_example_ids: Vec<String>,
    pub raw: String,
    pub extracted: String,
    pub backend: String,
}

/// Reports of one (mode, k) setting.
#[derive(Debug, Clone)]
pub struct SettingOutcome {
    pub name: String,
    pub mode: PromptMode,
    pub k: usize,
    pub per_seed: Vec<(String, EvalReport)>,
    /// The single report for similarity modes, the seed average otherwise.
    pub combined: EvalReport,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| CliError::Data(e.to_string()))?);
        out.push('\n');
    }
    write_file(path, &out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1))))
        .collect()
}

fn file_digest(path: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| CliError::io(path, e))?))
}

/// Writes `{stem}.csv` and `{stem}.md` for a report.
pub fn write_report(output_dir: &Path, stem: &str, report: &EvalReport) -> Result<Vec<PathBuf>, CliError> {
    let csv = output_dir.join(format!("{stem}.csv"));
    let md = output_dir.join(format!("{stem}.md"));
    write_file(&csv, &report.to_csv()?)?;
    write_file(&md, &report.to_markdown())?;
    Ok(vec![csv, md])
}

pub struct Pipeline {
    cfg: ExperimentConfig,
    data: Data,
    templates: TemplateSet,
    embedder: Box<dyn TextEmbedder>,
    emb_cache: EmbeddingCache,
    index: Option<SimilarityIndex>,
    generator: Generator,
    langid: &'static LanguageIdentifier,
    manifest: RunManifest,
}

impl Pipeline {
    pub fn open(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let backend = build_backend(&cfg)?;
        Self::open_with_backend(cfg, backend)
    }

    /// Opens the pipeline with an explicit backend in place of the configured one.
    pub fn open_with_backend(cfg: ExperimentConfig, backend: Arc<dyn Backend>) -> Result<Self, CliError> {
        cfg.validate()?;
        let started = Instant::now();
        let data = Data::load(&cfg)?;
        let templates = load_templates(&cfg)?;
        let out = cfg.experiment.output_dir.clone();
        let cache_dir = cfg.cache_dir();
        fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        fs::create_dir_all(&cache_dir).map_err(|e| CliError::io(&cache_dir, e))?;

        let embedder = cfg.embedder.build()?;
        let emb_cache = EmbeddingCache::open(cache_dir.join("embeddings.tsv"))?;
        let responses = Arc::new(ResponseCache::open(cache_dir.join("responses.tsv"))?);
        let g = &cfg.generation;
        let generator = Generator::new(backend, responses)
            .with_retry(RetryPolicy { max_retries: g.max_retries, base_delay: Duration::from_millis(g.retry_base_ms) })
            .with_char_budget(g.char_budget);

        let mut manifest = RunManifest::load_or_new(&out, &cfg.digest())?;
        manifest.record(
            "ingest",
            StageRecord {
                input_digest: digest_parts([data.pool_digest.as_str(), data.test_digest.as_str()]),
                completed: true,
                artifacts: vec![],
                wall_ms: started.elapsed().as_millis() as u64,
                error: None,
            },
        );
        manifest.save(&out)?;
        Ok(Pipeline {
            cfg,
            data,
            templates,
            embedder,
            emb_cache,
            index: None,
            generator,
            langid: LanguageIdentifier::bundled(),
            manifest,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Data {
        &self.data
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Embedding requests issued by this pipeline's embedder.
    pub fn embed_calls(&self) -> u64 {
        self.embedder.calls()
    }

    /// Completion requests issued to the backend, retries included.
    pub fn generate_calls(&self) -> u64 {
        self.generator.backend_calls()
    }

    fn output_dir(&self) -> PathBuf {
        self.cfg.experiment.output_dir.clone()
    }

    fn save_manifest(&self) -> Result<(), CliError> {
        self.manifest.save(&self.output_dir())
    }

    /// Builds the similarity index, or loads the snapshot for this pool and embedder.
    pub fn ensure_index(&mut self) -> Result<&SimilarityIndex, CliError> {
        if self.index.is_none() {
            let started = Instant::now();
            let fp = self.embedder.fingerprint();
            let digest = digest_parts([self.data.pool_digest.as_str(), fp.as_str()]);
            let path = self.cfg.cache_dir().join(format!("index-{}.snap", &digest[..16]));
            let loaded = if path.exists() {
                match SimilarityIndex::load(&path, self.data.pool.clone(), &fp) {
                    Ok(ix) => Some(ix),
                    Err(e) => {
                        log::warn!("ignoring index snapshot {}: {e}", path.display());
                        None
                    }
                }
            } else {
                None
            };
            let index = match loaded {
                Some(ix) => ix,
                None => {
                    let ix = SimilarityIndex::build(self.data.pool.clone(), self.embedder.as_ref(), &self.emb_cache)?;
                    ix.save(&path)?;
                    ix
                }
            };
            self.manifest.record(
                "index",
                StageRecord {
                    input_digest: digest,
                    completed: true,
                    artifacts: vec![path],
                    wall_ms: started.elapsed().as_millis() as u64,
                    error: None,
                },
            );
            self.save_manifest()?;
            self.index = Some(index);
        }
        Ok(self.index.as_ref().expect("index set above"))
    }

    fn check_data(&self, k: usize) -> Result<(), CliError> {
        let problems = self.data.problems(&self.cfg, k);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    /// Selects examples and renders the prompt for every covered test row.
    pub fn plan(&mut self, mode: PromptMode, k: usize, seed: Option<u64>) -> Result<Vec<PlannedPrompt>, CliError> {
        self.check_data(k)?;
        if k > 0 {
            self.ensure_index()?;
        }
        let e = &self.cfg.experiment;
        let template = self.templates.get(e.task);
        let retriever = match &self.index {
            Some(ix) if k > 0 => Some(Retriever::new(ix, self.embedder.as_ref(), &self.emb_cache)?),
            _ => None,
        };
        let mut planned = Vec::with_capacity(self.data.rows.len());
        for row in self.data.rows() {
            let examples = match &retriever {
                None => Vec::new(),
                Some(r) => {
                    let selection = mode.selection(seed.map_or(0, |s| query_seed(s, &row.id)));
                    let mut rc = match e.regime {
                        RetrievalMode::SameLanguage => RetrievalConfig::same_language(k, &row.target_lang, row.attribute),
                        RetrievalMode::CrossLingual => RetrievalConfig::cross_lingual(k, &row.target_lang, row.attribute),
                    }
                    .with_selection(selection)
                    .with_dedup(e.dedup_sources);
                    if let (RetrievalMode::CrossLingual, Some(d)) = (e.regime, &e.donor_languages) {
                        rc = rc.with_donors(d.clone());
                    }
                    r.select_incontext(&row.source_text, &rc)?
                }
            };
            let prompt = render_prompt(&row.source_text, &row.target_lang, row.attribute, &examples, mode, template)?;
            planned.push(PlannedPrompt { row: row.clone(), prompt });
        }
        Ok(planned)
    }

    fn generate(&mut self, tag: &str, planned: &[PlannedPrompt]) -> Result<Vec<GenerationRow>, CliError> {
        let started = Instant::now();
        let params = self.cfg.generation.params();
        let backend = self.generator.backend_id();
        let mut parts: Vec<String> = planned.iter().map(|p| prompt_digest(&p.prompt.text)).collect();
        parts.push(params.fingerprint());
        parts.push(backend.clone());
        let digest = digest_parts(&parts);
        let stage = format!("generate:{tag}");
        let path = self.output_dir().join(format!("generations-{tag}.jsonl"));
        if self.manifest.is_fresh(&stage, &digest) {
            log::info!("{stage}: up to date");
            return read_jsonl(&path);
        }

        let prompts: Vec<String> = planned.iter().map(|p| p.prompt.text.clone()).collect();
        let template = self.templates.get(self.cfg.experiment.task);
        let fail = |this: &mut Self, msg: String| -> Result<(), CliError> {
            this.manifest.record(
                &stage,
                StageRecord {
                    input_digest: digest.clone(),
                    completed: false,
                    artifacts: vec![],
                    wall_ms: started.elapsed().as_millis() as u64,
                    error: Some(msg),
                },
            );
            this.save_manifest()
        };
        let results = match self.generator.run_batch(&prompts, &params, template, self.cfg.generation.parallelism) {
            Ok(r) => r,
            Err(e) => {
                fail(self, e.to_string())?;
                return Err(e.into());
            }
        };
        let failed: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().map(|e| e.to_string())).collect();
        if let Some(first) = failed.first().cloned() {
            let err = CliError::PartialGeneration { failed: failed.len(), total: results.len(), first };
            fail(self, err.to_string())?;
            return Err(err);
        }
        let rows: Vec<GenerationRow> = planned
            .iter()
            .zip(results)
            .map(|(p, r)| {
                let rec = r.expect("failures handled above");
                GenerationRow {
                    id: p.row.id.clone(),
                    target_lang: p.row.target_lang.clone(),
                    attribute: p.row.attribute,
                    prompt: p.prompt.text.clone(),
                    prompt_digest: rec.prompt_digest,
                    input_example_ids: p.prompt.input_example_ids.clone(),
                    raw: rec.raw_completion,
                    extracted: rec.extracted_translation,
                    backend: rec.backend,
                }
            })
            .collect();
        write_jsonl(&path, &rows)?;
        self.manifest.record(
            &stage,
            StageRecord {
                input_digest: digest,
                completed: true,
                artifacts: vec![path],
                wall_ms: started.elapsed().as_millis() as u64,
                error: None,
            },
        );
        self.save_manifest()?;
        Ok(rows)
    }

    /// Attaches remote scores when a scorer is configured. Returns false if
    /// any requested score could not be fetched.
    fn attach_remote_scores(&self, rows: &[GenerationRow], judgments: &mut [SegmentJudgment]) -> bool {
        let Some(sc) = &self.cfg.scorer else { return true };
        let kinds: Vec<ScorerKind> = [(sc.comet, ScorerKind::Comet), (sc.classifier, ScorerKind::AttributeClassifier)]
            .into_iter()
            .filter_map(|(on, k)| on.then_some(k))
            .collect();
        if kinds.is_empty() {
            return true;
        }
        let scorer = RemoteScorer::new(sc.url.clone(), Duration::from_secs(sc.timeout_secs));
        let pairs: Vec<ScorePair> = rows
            .iter()
            .map(|g| {
                let row = self.data.test.by_id(&g.id).expect("generation row ids come from the test pool");
                ScorePair {
                    src: row.source_text.clone(),
                    hyp: g.extracted.clone(),
                    reference: row.target_text.clone(),
                    lang: row.target_lang.clone(),
                    attribute: row.attribute.to_string(),
                }
            })
            .collect();
        let mut ok = true;
        for kind in kinds {
            match scorer.score(&pairs, kind).and_then(|s| attach_scores(judgments, kind, &s)) {
                Ok(()) => {}
                Err(e) => {
                    log::warn!("{} scores omitted: {e}", kind.as_str());
                    ok = false;
                }
            }
        }
        ok
    }

    fn evaluate(&mut self, tag: &str, rows: &[GenerationRow]) -> Result<EvalReport, CliError> {
        let started = Instant::now();
        let out = self.output_dir();
        let gen_path = out.join(format!("generations-{tag}.jsonl"));
        let gating = self.cfg.gating();
        let scorer = serde_json::to_string(&self.cfg.scorer).expect("scorer section serializes");
        let digest = digest_parts([
            file_digest(&gen_path)?,
            self.data.test_digest.clone(),
            gating.to_string(),
            scorer,
        ]);
        let stage = format!("evaluate:{tag}");
        let path = out.join(format!("judgments-{tag}.jsonl"));
        let judgments: Vec<SegmentJudgment> = if self.manifest.is_fresh(&stage, &digest) {
            log::info!("{stage}: up to date");
            read_jsonl(&path)?
        } else {
            let mut judgments: Vec<SegmentJudgment> = rows
                .iter()
                .map(|g| {
                    let row = self.data.test.by_id(&g.id).ok_or_else(|| {
                        CliError::Data(format!("{}: id `{}` is not in the test pool", gen_path.display(), g.id))
                    })?;
                    Ok(judge_segment(row, &g.extracted, gating, self.langid))
                })
                .collect::<Result<_, CliError>>()?;
            // A scorer outage leaves the stage incomplete so the next run retries it.
            let complete = self.attach_remote_scores(rows, &mut judgments);
            write_jsonl(&path, &judgments)?;
            self.manifest.record(
                &stage,
                StageRecord {
                    input_digest: digest,
                    completed: complete,
                    artifacts: vec![path],
                    wall_ms: started.elapsed().as_millis() as u64,
                    error: (!complete).then(|| "remote scorer unavailable".to_string()),
                },
            );
            self.save_manifest()?;
            judgments
        };
        let report = aggregate_report(&judgments, Grouping::Cell)?;
        write_report(&out, &format!("report-{tag}"), &report)?;
        Ok(report)
    }

    /// Runs one (mode, k) setting over every effective seed.
    pub fn run_setting(&mut self, mode: PromptMode, k: usize) -> Result<SettingOutcome, CliError> {
        let name = setting_name(mode, k);
        let seeds = self.cfg.effective_seeds(mode);
        let tags: Vec<String> = seeds.iter().map(|&s| run_tag(mode, k, s)).collect();
        self.manifest.settings.insert(name.clone(), SettingRecord { mode, k, tags: tags.clone(), error: None });
        let result = self.run_seeds(mode, k, &seeds, &tags);
        if let Err(e) = &result {
            if let Some(rec) = self.manifest.settings.get_mut(&name) {
                rec.error = Some(e.to_string());
            }
        }
        self.save_manifest()?;
        let per_seed = result?;
        let combined = combine(mode, &per_seed)?;
        if !mode.uses_similarity() {
            write_report(&self.output_dir(), &format!("report-{name}"), &combined)?;
        }
        Ok(SettingOutcome { name, mode, k, per_seed, combined })
    }

    fn run_seeds(
        &mut self,
        mode: PromptMode,
        k: usize,
        seeds: &[Option<u64>],
        tags: &[String],
    ) -> Result<Vec<(String, EvalReport)>, CliError> {
        let mut reports = Vec::with_capacity(seeds.len());
        for (&seed, tag) in seeds.iter().zip(tags) {
            let planned = self.plan(mode, k, seed)?;
            let rows = self.generate(tag, &planned)?;
            let report = self.evaluate(tag, &rows)?;
            log::info!("{tag}: n={} bleu={:.2} lex_acc={:.3}", report.average.n, report.average.bleu, report.average.lex_acc);
            reports.push((tag.clone(), report));
        }
        Ok(reports)
    }

    /// Runs every (k, mode) cell. Failed cells are logged and recorded;
    /// the remaining cells still run.
    pub fn sweep(&mut self, ks: &[usize], modes: &[PromptMode]) -> Result<SweepOutcome, CliError> {
        let mut cells = Vec::new();
        let mut failed = Vec::new();
        for &k in ks {
            for &mode in modes {
                let name = setting_name(mode, k);
                match self.run_setting(mode, k) {
                    Ok(outcome) => cells.push((name, outcome.combined.average)),
                    Err(e) => {
                        log::error!("sweep cell {name} failed: {e}");
                        failed.push((name, e));
                    }
                }
            }
        }
        self.manifest.sweep = cells.iter().map(|(n, _)| n.clone()).collect();
        self.save_manifest()?;
        let rows: Vec<SweepRow> = cells
            .into_iter()
            .map(|(name, avg)| {
                let rec = &self.manifest.settings[&name];
                SweepRow { k: rec.k, mode: rec.mode, avg }
            })
            .collect();
        if !rows.is_empty() {
            write_sweep(&self.output_dir(), &rows)?;
        }
        Ok(SweepOutcome { rows, failed })
    }
}

fn combine(mode: PromptMode, per_seed: &[(String, EvalReport)]) -> Result<EvalReport, CliError> {
    if mode.uses_similarity() || per_seed.len() == 1 {
        return Ok(per_seed[0].1.clone());
    }
    let reports: Vec<EvalReport> = per_seed.iter().map(|(_, r)| r.clone()).collect();
    Ok(average_reports(&reports)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub mode: PromptMode,
    /// The setting's `AVG` row.
    pub avg: ReportRow,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub failed: Vec<(String, CliError)>,
}

/// CSV with one row per (k, mode); optional score columns appear when every
/// row has them.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String, CliError> {
    let comet = rows.iter().all(|r| r.avg.comet.is_some());
    let s_acc = rows.iter().all(|r| r.avg.s_acc.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["k", "mode", "n", "bleu", "lex_acc", "lang_pass_rate"];
    if comet {
        header.push("comet");
    }
    if s_acc {
        header.push("s_acc");
    }
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let a = &r.avg;
        let mut rec = vec![
            r.k.to_string(),
            r.mode.to_string(),
            a.n.to_string(),
            format!("{:.4}", a.bleu),
            format!("{:.4}", a.lex_acc),
            format!("{:.4}", a.lang_pass_rate),
        ];
        if comet {
            rec.push(format!("{:.4}", a.comet.unwrap_or_default()));
        }
        if s_acc {
            rec.push(format!("{:.4}", a.s_acc.unwrap_or_default()));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn sweep_markdown(rows: &[SweepRow]) -> String {
    let mut modes: Vec<PromptMode> = rows.iter().map(|r| r.mode).collect::<BTreeSet<_>>().into_iter().collect();
    modes.sort();
    let mut by_k: BTreeMap<usize, BTreeMap<PromptMode, &ReportRow>> = BTreeMap::new();
    for r in rows {
        by_k.entry(r.k).or_default().insert(r.mode, &r.avg);
    }
    let mut out = String::from("| k |");
    for m in &modes {
        out.push_str(&format!(" {m} BLEU | {m} L-Acc |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|---|".repeat(modes.len()));
    out.push('\n');
    for (k, cells) in by_k {
        out.push_str(&format!("| {k} |"));
        for m in &modes {
            match cells.get(m) {
                Some(a) => out.push_str(&format!(" {:.1} | {:.3} |", a.bleu, a.lex_acc)),
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_sweep(output_dir: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    write_file(&output_dir.join("sweep.csv"), &sweep_csv(rows)?)?;
    write_file(&output_dir.join("sweep.md"), &sweep_markdown(rows))
}

/// Rebuilds every report from the judgment files named in the manifest.
pub fn rebuild_reports(output_dir: &Path) -> Result<usize, CliError> {
    let manifest = RunManifest::load_or_new(output_dir, "")?;
    let mut written = 0;
    let mut combined: BTreeMap<String, EvalReport> = BTreeMap::new();
    for (name, setting) in &manifest.settings {
        if setting.error.is_some() {
            continue;
        }
        let mut per_seed = Vec::new();
        for tag in &setting.tags {
            let judgments: Vec<SegmentJudgment> = read_jsonl(&output_dir.join(format!("judgments-{tag}.jsonl")))?;
            let report = aggregate_report(&judgments, Grouping::Cell)?;
            write_report(output_dir, &format!("report-{tag}"), &report)?;
            written += 1;
            per_seed.push((tag.clone(), report));
        }
        let report = combine(setting.mode, &per_seed)?;
        if !setting.mode.uses_similarity() {
            write_report(output_dir, &format!("report-{name}"), &report)?;
            written += 1;
        }
        combined.insert(name.clone(), report);
    }
    let rows: Vec<SweepRow> = manifest
        .sweep
        .iter()
        .filter_map(|name| {
            let rec = manifest.settings.get(name)?;
            Some(SweepRow { k: rec.k, mode: rec.mode, avg: combined.get(name)?.average.clone() })
        })
        .collect();
    if !rows.is_empty() {
        write_sweep(output_dir, &rows)?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_seeds_differ_per_row_and_run() {
        assert_ne!(query_seed(1, "a"), query_seed(1, "b"));
        assert_ne!(query_seed(1, "a"), query_seed(2, "a"));
        assert_eq!(query_seed(7, "x"), query_seed(7, "x"));
    }

    #[test]
    fn tags() {
        assert_eq!(run_tag(PromptMode::Base, 16, Some(3)), "base-k16-seed3");
        assert_eq!(run_tag(PromptMode::Ramp, 16, None), "ramp-k16");
    }

    fn avg(bleu: f64) -> ReportRow {
        ReportRow {
            tgt_lang: "AVG".into(),
            attribute: "*".into(),
            n: 4,
            bleu,
            lex_acc: 0.5,
            lang_pass_rate: 1.0,
            comet: None,
            s_acc: None,
        }
    }

    #[test]
    fn sweep_table_layout() {
        let rows = vec![
            SweepRow { k: 4, mode: PromptMode::Base, avg: avg(10.0) },
            SweepRow { k: 4, mode: PromptMode::Ramp, avg: avg(20.0) },
            SweepRow { k: 8, mode: PromptMode::Ramp, avg: avg(30.0) },
        ];
        let csv = sweep_csv(&rows).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "k,mode,n,bleu,lex_acc,lang_pass_rate");
        assert_eq!(csv.lines().nth(2).unwrap(), "4,ramp,4,20.0000,0.5000,1.0000");
        let md = sweep_markdown(&rows);
        assert!(md.contains("| 8 | - | - | 30.0 | 0.500 |"), "{md}");
    }
}
