//! Synthetic formality data built from the bundled language-ID sentences,
//! plus helpers for writing experiment configs into a temp directory.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use ramp_cli::config::ExperimentConfig;
use ramp_core::corpus::{write_pool, AttributeExample, AttributeValue, ExamplePool};
use ramp_core::evaluation::langid::SEED_CORPORA;
use ramp_core::evaluation::lexical_accuracy;
use ramp_core::generation::TableBackend;
use tempfile::TempDir;

/// Languages of the synthetic data; four donors each for cross-lingual runs.
pub const LANGS: [&str; 5] = ["de", "es", "fr", "it", "ja"];

/// (formal, informal) marker words per language.
pub fn markers(lang: &str) -> (&'static str, &'static str) {
    match lang {
        "de" => ("Sie", "du"),
        "es" => ("usted", "tú"),
        "fr" => ("vous", "tu"),
        "it" => ("Lei", "tu"),
        "ja" => ("ございます", "じゃん"),
        _ => panic!("no markers for {lang}"),
    }
}

fn lines(lang: &str) -> Vec<&'static str> {
    let (_, text) = SEED_CORPORA.iter().find(|(l, _)| *l == lang).expect("bundled language");
    text.lines().filter(|l| !l.trim().is_empty()).collect()
}

fn with_marker(lang: &str, sentence: &str, marker: &str) -> String {
    if lang == "ja" {
        format!("{sentence}{marker}")
    } else {
        format!("{sentence} {marker}")
    }
}

/// A labeled row plus its contrastive (opposite-attribute) reference.
#[derive(Debug, Clone)]
pub struct SynthRow {
    pub example: AttributeExample,
    pub contrastive: String,
}

fn synth(id: String, lang: &str, attr: AttributeValue, source: &str, sentence: &str) -> SynthRow {
    let (formal, informal) = markers(lang);
    let (mine, other) = if attr == AttributeValue::Formal { (formal, informal) } else { (informal, formal) };
    SynthRow {
        example: AttributeExample {
            id,
            source_text: source.to_string(),
            target_text: with_marker(lang, sentence, mine),
            source_lang: "en".into(),
            target_lang: lang.into(),
            attribute: attr,
            markers: vec![mine.to_string()],
            opposite_markers: vec![other.to_string()],
        },
        contrastive: with_marker(lang, sentence, other),
    }
}

/// Sentences of `lang` that contain neither marker, paired with English sources.
fn usable(lang: &str) -> Vec<(&'static str, &'static str)> {
    let (formal, informal) = markers(lang);
    let en = lines("en");
    lines(lang)
        .into_iter()
        .zip(en)
        .filter(|(s, _)| {
            !lexical_accuracy(s, &[formal.to_string()], &[], lang) && !lexical_accuracy(s, &[informal.to_string()], &[], lang)
        })
        .collect()
}

/// Train pool: every usable sentence in both attributes.
pub fn train_rows() -> Vec<SynthRow> {
    let mut out = Vec::new();
    for lang in LANGS {
        for (i, (sentence, source)) in usable(lang).into_iter().enumerate() {
            for attr in [AttributeValue::Formal, AttributeValue::Informal] {
                out.push(synth(format!("p-{lang}-{attr}-{i}"), lang, attr, source, sentence));
            }
        }
    }
    out
}

/// Test rows: `per_cell` rows for each (language, attribute) cell.
pub fn test_rows(per_cell: usize) -> Vec<SynthRow> {
    let mut out = Vec::new();
    for lang in LANGS {
        let usable = usable(lang);
        assert!(usable.len() >= 2 * per_cell, "{lang} has only {} usable sentences", usable.len());
        for attr in [AttributeValue::Formal, AttributeValue::Informal] {
            let offset = if attr == AttributeValue::Formal { 0 } else { per_cell };
            for i in 0..per_cell {
                let (sentence, source) = usable[offset + i];
                out.push(synth(format!("t-{lang}-{attr}-{i}"), lang, attr, source, sentence));
            }
        }
    }
    out
}

pub fn pool_text(rows: &[SynthRow]) -> String {
    write_pool(&ExamplePool::from_examples(rows.iter().map(|r| r.example.clone()).collect()).expect("valid rows"))
}

pub struct Fixture {
    pub dir: TempDir,
    pub test: Vec<SynthRow>,
}

impl Fixture {
    /// Writes `pool.tsv` and `test.tsv` with `per_cell` test rows per cell.
    pub fn new(per_cell: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let test = test_rows(per_cell);
        fs::write(dir.path().join("pool.tsv"), pool_text(&train_rows())).unwrap();
        fs::write(dir.path().join("test.tsv"), pool_text(&test)).unwrap();
        Fixture { dir, test }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes `{name}.toml` with output in `out-{name}`. `experiment` holds
    /// extra `[experiment]` keys; `rest` is appended verbatim.
    pub fn write_config(&self, name: &str, experiment: &str, rest: &str) -> PathBuf {
        let text = format!(
            "[data]\ntrain = [\"pool.tsv\"]\ntest = \"test.tsv\"\n\n[experiment]\ntask = \"formality\"\noutput_dir = \"out-{name}\"\n{experiment}\n\n{rest}\n"
        );
        let path = self.path(&format!("{name}.toml"));
        fs::write(&path, text).unwrap();
        path
    }

    pub fn config(&self, name: &str, experiment: &str, rest: &str) -> ExperimentConfig {
        ExperimentConfig::load(&self.write_config(name, experiment, rest)).unwrap()
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.path(&format!("out-{name}"))
    }

    pub fn gold(&self, id: &str) -> &SynthRow {
        self.test.iter().find(|r| r.example.id == id).expect("known id")
    }
}

pub const ECHO: &str = "[backend]\nkind = \"echo-mock\"\ncanned = \" Hallo Sie.\\n\"";

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Programs a table backend that answers each prompt with `completion(id)`.
pub fn table_for(prompts: &[(String, String)], completion: impl Fn(&str) -> String) -> String {
    let mut t = TableBackend::new("t");
    for (id, prompt) in prompts {
        t.insert_prompt(prompt, format!(" {}\n", completion(id)));
    }
    t.to_file_contents()
}

/// Data rows of a report CSV, keyed by `lang,attribute`.
pub fn csv_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}
