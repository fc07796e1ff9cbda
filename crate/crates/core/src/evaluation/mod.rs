//! Scoring of extracted translations and report aggregation.

pub mod bleu;
pub mod langid;
pub mod lexical;
pub mod scorer;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttributeExample, AttributeValue};

pub use bleu::{bleu_corpus, segment_stats, BleuStats, BleuTokenizer};
pub use langid::{detect_language, LanguageIdentifier};
pub use lexical::lexical_accuracy;
pub use scorer::{RemoteScorer, ScorePair, ScorerKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("cannot identify the language of empty text")]
    EmptyText,
    #[error("no judgments to aggregate")]
    EmptyJudgments,
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("reports do not line up: {0}")]
    ReportMismatch(String),
    #[error("report serialization failed: {0}")]
    Serialize(String),
}

/// Per-segment scoring outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentJudgment {
    pub id: String,
    pub target_lang: String,
    pub attribute: AttributeValue,
    pub bleu_stats: BleuStats,
    /// Marker verdict before language gating.
    pub lexical_match: bool,
    /// Marker verdict after language gating, if gating was on.
    pub lexical_correct: bool,
    pub detected_lang: String,
    pub lang_pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comet: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_acc: Option<f64>,
}

impl SegmentJudgment {
    /// Recomputes `lexical_correct` for the given gating setting.
    pub fn with_gating(mut self, gating: bool) -> Self {
        self.lexical_correct = self.lexical_match && (!gating || self.lang_pass);
        self
    }
}

/// Judges `hypothesis` against a gold test row. The row's markers are the
/// target spans and its opposite markers the other direction's spans.
///
/// Languages the identifier does not cover always pass the language check.
pub fn judge_segment(row: &AttributeExample, hypothesis: &str, gating: bool, langid: &LanguageIdentifier) -> SegmentJudgment {
    let lang = row.target_lang.as_str();
    let tokenizer = BleuTokenizer::for_lang(lang);
    let (detected_lang, lang_pass) = match langid.detect(hypothesis) {
        Ok((code, _)) => {
            let supported = langid.languages().contains(&lang);
            let pass = !supported || code == lang;
            (code, pass)
        }
        Err(_) => ("und".to_string(), false),
    };
    SegmentJudgment {
        id: row.id.clone(),
        target_lang: row.target_lang.clone(),
        attribute: row.attribute,
        bleu_stats: segment_stats(hypothesis, &row.target_text, tokenizer),
        lexical_match: lexical_accuracy(hypothesis, &row.markers, &row.opposite_markers, lang),
        lexical_correct: false,
        detected_lang,
        lang_pass,
        comet: None,
        s_acc: None,
    }
    .with_gating(gating)
}

/// Sets `comet` or `s_acc` from scores aligned with `judgments`.
pub fn attach_scores(judgments: &mut [SegmentJudgment], kind: ScorerKind, scores: &[f64]) -> Result<(), EvalError> {
    if scores.len() != judgments.len() {
        return Err(EvalError::ScorerUnavailable(format!("expected {} scores, got {}", judgments.len(), scores.len())));
    }
    for (j, &s) in judgments.iter_mut().zip(scores) {
        match kind {
            ScorerKind::Comet => j.comet = Some(s),
            ScorerKind::AttributeClassifier => j.s_acc = Some(s),
        }
    }
    Ok(())
}

/// How judgments are grouped into report rows. `*` stands for "all".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    #[default]
    Cell,
    Language,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tgt_lang: String,
    pub attribute: String,
    pub n: usize,
    pub bleu: f64,
    pub lex_acc: f64,
    pub lang_pass_rate: f64,
    pub comet: Option<f64>,
    pub s_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    /// Unweighted mean over rows; `n` is the total segment count.
    pub average: ReportRow,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = xs.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn mean_if_all(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Option<Vec<f64>> = xs.collect();
    vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
}

fn macro_average(rows: &[ReportRow]) -> ReportRow {
    ReportRow {
        tgt_lang: "AVG".into(),
        attribute: "*".into(),
        n: rows.iter().map(|r| r.n).sum(),
        bleu: mean(rows.iter().map(|r| r.bleu)),
        lex_acc: mean(rows.iter().map(|r| r.lex_acc)),
        lang_pass_rate: mean(rows.iter().map(|r| r.lang_pass_rate)),
        comet: mean_if_all(rows.iter().map(|r| r.comet)),
        s_acc: mean_if_all(rows.iter().map(|r| r.s_acc)),
    }
}

/// Aggregates judgments into rows sorted by key. BLEU is pooled from summed
/// segment statistics; accuracies are means of booleans.
pub fn aggregate_report(judgments: &[SegmentJudgment], grouping: Grouping) -> Result<EvalReport, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::EmptyJudgments);
    }
    let mut groups: BTreeMap<(String, String), Vec<&SegmentJudgment>> = BTreeMap::new();
    for j in judgments {
        let key = match grouping {
            Grouping::Cell => (j.target_lang.clone(), j.attribute.as_str().to_string()),
            Grouping::Language => (j.target_lang.clone(), "*".to_string()),
            Grouping::Attribute => ("*".to_string(), j.attribute.as_str().to_string()),
        };
        groups.entry(key).or_default().push(j);
    }
    let rows: Vec<ReportRow> = groups
        .into_iter()
        .map(|((tgt_lang, attribute), js)| {
            let mut stats = BleuStats::default();
            for j in &js {
                stats.add(&j.bleu_stats);
            }
            let n = js.len();
            let frac = |f: fn(&SegmentJudgment) -> bool| js.iter().filter(|j| f(j)).count() as f64 / n as f64;
            ReportRow {
                tgt_lang,
                attribute,
                n,
                bleu: stats.score(),
                lex_acc: frac(|j| j.lexical_correct),
                lang_pass_rate: frac(|j| j.lang_pass),
                comet: mean_if_all(js.iter().map(|j| j.comet)),
                s_acc: mean_if_all(js.iter().map(|j| j.s_acc)),
            }
        })
        .collect();
    let average = macro_average(&rows);
    Ok(EvalReport { rows, average })
}

/// Element-wise mean of reports over the same rows (e.g. one per seed).
/// An optional column survives only if every input report has it.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::EmptyJudgments)?;
    for r in &reports[1..] {
        if r.rows.len() != first.rows.len() {
            return Err(EvalError::ReportMismatch(format!("{} rows vs {}", r.rows.len(), first.rows.len())));
        }
        for (a, b) in r.rows.iter().zip(&first.rows) {
            if a.tgt_lang != b.tgt_lang || a.attribute != b.attribute || a.n != b.n {
                return Err(EvalError::ReportMismatch(format!(
                    "row ({}, {}, n={}) vs ({}, {}, n={})",
                    a.tgt_lang, a.attribute, a.n, b.tgt_lang, b.attribute, b.n
                )));
            }
        }
    }
    let rows: Vec<ReportRow> = first
        .rows
        .iter()
        .enumerate()
        .map(|(i, base)| ReportRow {
            tgt_lang: base.tgt_lang.clone(),
            attribute: base.attribute.clone(),
            n: base.n,
            bleu: mean(reports.iter().map(|r| r.rows[i].bleu)),
            lex_acc: mean(reports.iter().map(|r| r.rows[i].lex_acc)),
            lang_pass_rate: mean(reports.iter().map(|r| r.rows[i].lang_pass_rate)),
            comet: mean_if_all(reports.iter().map(|r| r.rows[i].comet)),
            s_acc: mean_if_all(reports.iter().map(|r| r.rows[i].s_acc)),
        })
        .collect();
    let average = macro_average(&rows);
    Ok(EvalReport { rows, average })
}

impl EvalReport {
    pub fn has_comet(&self) -> bool {
        self.rows.iter().all(|r| r.comet.is_some())
    }

    pub fn has_s_acc(&self) -> bool {
        self.rows.iter().all(|r| r.s_acc.is_some())
    }

    /// CSV with one row per group plus a trailing `AVG,*` macro row.
    pub fn to_csv(&self) -> Result<String, EvalError> {
        let (comet, s_acc) = (self.has_comet(), self.has_s_acc());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["tgt_lang", "attribute", "n", "bleu", "lex_acc", "lang_pass_rate"];
        if comet {
            header.push("comet");
        }
        if s_acc {
            header.push("s_acc");
        }
        let ser = |e: csv::Error| EvalError::Serialize(e.to_string());
        w.write_record(&header).map_err(ser)?;
        for row in self.rows.iter().chain(std::iter::once(&self.average)) {
            let mut rec = vec![
                row.tgt_lang.clone(),
                row.attribute.clone(),
                row.n.to_string(),
                format!("{:.4}", row.bleu),
                format!("{:.4}", row.lex_acc),
                format!("{:.4}", row.lang_pass_rate),
            ];
            if comet {
                rec.push(format!("{:.4}", row.comet.unwrap_or_default()));
            }
            if s_acc {
                rec.push(format!("{:.4}", row.s_acc.unwrap_or_default()));
            }
            w.write_record(&rec).map_err(ser)?;
        }
        let bytes = w.into_inner().map_err(|e| EvalError::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| EvalError::Serialize(e.to_string()))
    }

    /// Markdown table with metrics as rows and `lang attr` cells as columns.
    pub fn to_markdown(&self) -> String {
        let label = |r: &ReportRow| {
            let a = match r.attribute.as_str() {
                "formal" => "F",
                "informal" => "I",
                "feminine" => "F",
                "masculine" => "M",
                other => other,
            };
            format!("{} {}", r.tgt_lang, a)
        };
        let mut out = String::from("| Metric |");
        for r in &self.rows {
            let _ = write!(out, " {} |", label(r));
        }
        out.push_str(" AVG |\n|---|");
        for _ in 0..=self.rows.len() {
            out.push_str("---:|");
        }
        out.push('\n');
        let mut line = |name: &str, f: &dyn Fn(&ReportRow) -> String| {
            let _ = write!(out, "| {name} |");
            for r in self.rows.iter().chain(std::iter::once(&self.average)) {
                let _ = write!(out, " {} |", f(r));
            }
            out.push('\n');
        };
        line("n", &|r| r.n.to_string());
        line("BLEU", &|r| format!("{:.1}", r.bleu));
        line("L-Acc", &|r| format!("{:.3}", r.lex_acc));
        line("Lang-pass", &|r| format!("{:.3}", r.lang_pass_rate));
        if self.has_comet() {
            line("COMET", &|r| format!("{:.3}", r.comet.unwrap_or_default()));
        }
        if self.has_s_acc() {
            line("S-Acc", &|r| format!("{:.3}", r.s_acc.unwrap_or_default()));
        }
        out
    }
}
