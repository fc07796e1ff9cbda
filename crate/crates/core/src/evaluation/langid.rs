//! Character n-gram language identification.
//!
//! Texts dominated by a script that only one configured language uses
//! (kana/Han, Arabic, Devanagari, Cyrillic) are decided by script. Latin text
//! is scored against rank-ordered 1–3-gram profiles with the out-of-place
//! distance. Profiles are built from the seed corpora under `data/langid/`.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;

use super::EvalError;

pub const PROFILE_SIZE: usize = 300;
pub const MAX_NGRAM: usize = 3;

/// Bundled seed corpora, one sentence per line.
pub const SEED_CORPORA: &[(&str, &str)] = &[
    ("ar", include_str!("../../data/langid/ar.txt")),
    ("de", include_str!("../../data/langid/de.txt")),
    ("en", include_str!("../../data/langid/en.txt")),
    ("es", include_str!("../../data/langid/es.txt")),
    ("fr", include_str!("../../data/langid/fr.txt")),
    ("hi", include_str!("../../data/langid/hi.txt")),
    ("it", include_str!("../../data/langid/it.txt")),
    ("ja", include_str!("../../data/langid/ja.txt")),
    ("nl", include_str!("../../data/langid/nl.txt")),
    ("pt", include_str!("../../data/langid/pt.txt")),
    ("ru", include_str!("../../data/langid/ru.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Script {
    Latin,
    Japanese,
    Arabic,
    Devanagari,
    Cyrillic,
    Other,
}

fn script_of(c: char) -> Script {
    match c as u32 {
        0x3040..=0x30FF | 0x31F0..=0x31FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xFF66..=0xFF9F => Script::Japanese,
        0x0600..=0x06FF | 0x0750..=0x077F | 0x08A0..=0x08FF | 0xFB50..=0xFDFF | 0xFE70..=0xFEFF => Script::Arabic,
        0x0900..=0x097F => Script::Devanagari,
        0x0400..=0x04FF => Script::Cyrillic,
        _ if c.is_alphabetic() && (c.is_ascii() || (0x00C0..=0x024F).contains(&(c as u32))) => Script::Latin,
        _ => Script::Other,
    }
}

fn script_language(script: Script) -> Option<&'static str> {
    match script {
        Script::Japanese => Some("ja"),
        Script::Arabic => Some("ar"),
        Script::Devanagari => Some("hi"),
        Script::Cyrillic => Some("ru"),
        Script::Latin | Script::Other => None,
    }
}

/// Ranked n-gram profile: gram -> rank (0 = most frequent).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    ranks: HashMap<String, usize>,
}

impl Profile {
    pub fn from_text(text: &str) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for word in normalize(text).split_whitespace() {
            let padded: Vec<char> = format!(" {word} ").chars().collect();
            for n in 1..=MAX_NGRAM {
                for gram in padded.windows(n) {
                    if n == 1 && gram[0] == ' ' {
                        continue;
                    }
                    *counts.entry(gram.iter().collect()).or_insert(0) += 1;
                }
            }
        }
        let mut grams: Vec<(String, u64)> = counts.into_iter().collect();
        grams.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        grams.truncate(PROFILE_SIZE);
        Profile { ranks: grams.into_iter().enumerate().map(|(i, (g, _))| (g, i)).collect() }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Out-of-place distance of `doc` from this language profile.
    pub fn distance(&self, doc: &Profile) -> usize {
        doc.ranks
            .iter()
            .map(|(gram, &r)| match self.ranks.get(gram) {
                Some(&lr) => r.abs_diff(lr),
                None => PROFILE_SIZE,
            })
            .sum()
    }
}

fn normalize(text: &str) -> String {
    text.nfc()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphabetic() { c } else { ' ' })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LanguageIdentifier {
    profiles: Vec<(String, Profile)>,
    script_langs: Vec<String>,
}

impl LanguageIdentifier {
    /// Identifier over all bundled languages. Built once per process.
    pub fn bundled() -> &'static LanguageIdentifier {
        static ID: OnceLock<LanguageIdentifier> = OnceLock::new();
        ID.get_or_init(|| LanguageIdentifier::from_corpora(SEED_CORPORA.iter().map(|(l, t)| (l.to_string(), t.to_string()))))
    }

    /// Builds profiles from `(code, text)` pairs. Languages that are decided
    /// by script still participate in the script rule even without a profile
    /// match.
    pub fn from_corpora<I: IntoIterator<Item = (String, String)>>(corpora: I) -> Self {
        let mut profiles = Vec::new();
        let mut script_langs = Vec::new();
        for (lang, text) in corpora {
            if ["ja", "ar", "hi", "ru"].contains(&lang.as_str()) {
                script_langs.push(lang);
            } else {
                profiles.push((lang, Profile::from_text(&text)));
            }
        }
        profiles.sort_by(|a, b| a.0.cmp(&b.0));
        script_langs.sort();
        LanguageIdentifier { profiles, script_langs }
    }

    pub fn languages(&self) -> Vec<&str> {
        let mut all: Vec<&str> = self.profiles.iter().map(|(l, _)| l.as_str()).chain(self.script_langs.iter().map(String::as_str)).collect();
        all.sort_unstable();
        all
    }

    /// Returns `(code, confidence)` with confidence in [0, 1].
    pub fn detect(&self, text: &str) -> Result<(String, f64), EvalError> {
        if text.trim().is_empty() {
            return Err(EvalError::EmptyText);
        }
        let mut script_counts: HashMap<&'static str, usize> = HashMap::new();
        let mut letters = 0usize;
        for c in text.nfc().filter(|c| c.is_alphabetic()) {
            letters += 1;
            if let Some(l) = script_language(script_of(c)) {
                *script_counts.entry(l).or_insert(0) += 1;
            }
        }
        if letters == 0 {
            return Ok(("und".to_string(), 0.0));
        }
        let best_script = script_counts
            .iter()
            .filter(|(l, _)| self.script_langs.iter().any(|s| s == *l))
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        if let Some((&lang, &count)) = best_script {
            // Japanese mixes kana/Han with Latin loanwords; any sizable share
            // of a unique script decides.
            if count * 2 >= letters || (lang == "ja" && count * 4 >= letters) {
                return Ok((lang.to_string(), count as f64 / letters as f64));
            }
        }
        if self.profiles.is_empty() {
            return Ok(("und".to_string(), 0.0));
        }
        let doc = Profile::from_text(text);
        let mut scored: Vec<(usize, &str)> = self.profiles.iter().map(|(l, p)| (p.distance(&doc), l.as_str())).collect();
        scored.sort_by(|a, b| match a.0.cmp(&b.0) {
            Ordering::Equal => a.1.cmp(b.1),
            o => o,
        });
        let (d1, best) = scored[0];
        let confidence = match scored.get(1) {
            Some(&(d2, _)) if d2 > 0 => (d2 - d1) as f64 / d2 as f64,
            _ => 1.0,
        };
        Ok((best.to_string(), confidence))
    }
}

/// Convenience wrapper over the bundled identifier.
pub fn detect_language(text: &str) -> Result<(String, f64), EvalError> {
    LanguageIdentifier::bundled().detect(text)
}

/// Splits each seed corpus into (profile lines, held-out lines), holding out
/// every fifth line.
pub fn held_out_split(text: &str) -> (String, Vec<String>) {
    let mut train = String::new();
    let mut held = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        if i % 5 == 4 {
            held.push(line.to_string());
        } else {
            train.push_str(line);
            train.push('\n');
        }
    }
    (train, held)
}

/// Fraction of held-out seed sentences identified as their own language
/// when profiles are built from the remaining lines.
pub fn held_out_accuracy() -> f64 {
    let splits: Vec<(String, String, Vec<String>)> = SEED_CORPORA
        .iter()
        .map(|(l, t)| {
            let (train, held) = held_out_split(t);
            (l.to_string(), train, held)
        })
        .collect();
    let id = LanguageIdentifier::from_corpora(splits.iter().map(|(l, t, _)| (l.clone(), t.clone())));
    let mut total = 0usize;
    let mut correct = 0usize;
    for (lang, _, held) in &splits {
        for line in held {
            total += 1;
            if id.detect(line).map(|(l, _)| &l == lang).unwrap_or(false) {
                correct += 1;
            }
        }
    }
    correct as f64 / total as f64
}
