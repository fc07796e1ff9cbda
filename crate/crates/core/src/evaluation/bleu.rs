//! Case-sensitive corpus BLEU (n = 1..4, brevity penalty, no smoothing).
//!
//! Tokenization for every language except Japanese follows these rules, in
//! order (equivalent to the widely used "13a" tokenizer):
//!
//! 1. remove `<skipped>`; delete `-\n`; replace `\n` with a space;
//! 2. unescape `&quot;` `&amp;` `&lt;` `&gt;`;
//! 3. pad the line with one space on each side;
//! 4. surround with spaces every char in `{|}~`, `[\]^_` + backtick,
//!    space..`&`, `(`..`+`, `:`..`@`, and `/`;
//! 5. split off `.` and `,` unless preceded by a digit;
//! 6. split off `.` and `,` unless followed by a digit;
//! 7. split off `-` when preceded by a digit;
//! 8. split on whitespace.
//!
//! Japanese is scored on characters: every non-whitespace char is a token.
//! A corpus with zero matches at any order scores 0.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuTokenizer {
    /// Punctuation-splitting word tokenizer.
    Intl13a,
    /// One token per non-whitespace character.
    Char,
}

impl BleuTokenizer {
    pub fn for_lang(lang: &str) -> Self {
        match lang {
            "ja" => BleuTokenizer::Char,
            _ => BleuTokenizer::Intl13a,
        }
    }

    pub fn tokenize(self, line: &str) -> Vec<String> {
        match self {
            BleuTokenizer::Char => line.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            BleuTokenizer::Intl13a => tokenize_13a(line),
        }
    }
}

struct Rules {
    punct: Regex,
    period_comma_after_non_digit: Regex,
    period_comma_before_non_digit: Regex,
    dash_after_digit: Regex,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| Rules {
        punct: Regex::new(r"([\x7B-\x7E\x5B-\x60\x20-\x26\x28-\x2B\x3A-\x40\x2F])").unwrap(),
        period_comma_after_non_digit: Regex::new(r"([^0-9])([\.,])").unwrap(),
        period_comma_before_non_digit: Regex::new(r"([\.,])([^0-9])").unwrap(),
        dash_after_digit: Regex::new(r"([0-9])(-)").unwrap(),
    })
}

fn tokenize_13a(line: &str) -> Vec<String> {
    let mut line = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let line = format!(" {line} ");
    let r = rules();
    let line = r.punct.replace_all(&line, " $1 ");
    let line = r.period_comma_after_non_digit.replace_all(&line, "$1 $2 ");
    let line = r.period_comma_before_non_digit.replace_all(&line, " $1 $2");
    let line = r.dash_after_digit.replace_all(&line, "$1 $2 ");
    line.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics for one (hypothesis, reference) pair. Corpus BLEU
/// is computed from the element-wise sum over segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU in [0, 100].
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches.contains(&0) {
            return 0.0;
        }
        let log_precision: f64 = (0..MAX_ORDER)
            .map(|n| (self.matches[n] as f64 / self.totals[n] as f64).ln())
            .sum::<f64>()
            / MAX_ORDER as f64;
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * log_precision.exp()
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

pub fn segment_stats(hypothesis: &str, reference: &str, tokenizer: BleuTokenizer) -> BleuStats {
    let hyp = tokenizer.tokenize(hypothesis);
    let refr = tokenizer.tokenize(reference);
    let mut stats = BleuStats { hyp_len: hyp.len() as u64, ref_len: refr.len() as u64, ..Default::default() };
    for n in 1..=MAX_ORDER {
        let hyp_counts = ngram_counts(&hyp, n);
        let ref_counts = ngram_counts(&refr, n);
        stats.totals[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
        stats.matches[n - 1] = hyp_counts
            .iter()
            .map(|(gram, &c)| c.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Corpus BLEU over `(hypothesis, reference)` pairs, tokenized for `lang`.
pub fn bleu_corpus<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)], lang: &str) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let tokenizer = BleuTokenizer::for_lang(lang);
    let mut total = BleuStats::default();
    for (h, r) in pairs {
        total.add(&segment_stats(h.as_ref(), r.as_ref(), tokenizer));
    }
    Ok(total.score())
}
