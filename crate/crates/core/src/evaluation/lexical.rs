//! Marker-based attribute accuracy.
//!
//! Target markers are located first, longest first, claiming non-overlapping
//! spans. An opposite-marker occurrence only counts when it is not fully
//! contained in a claimed span. This matters when one direction's marker is a
//! substring of the other's, as with Japanese honorific verb forms.

use crate::text::nfc;

/// Languages written without spaces between words; markers match as plain
/// substrings there.
pub fn is_unsegmented(lang: &str) -> bool {
    matches!(lang, "ja" | "zh" | "th")
}

/// Char-index span `[start, end)` into the NFC hypothesis.
pub type Span = (usize, usize);

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// All occurrences of `marker` in `hyp` (both as char vectors), honouring
/// token boundaries when `segmented`. Overlapping occurrences are included.
pub fn occurrences(hyp: &[char], marker: &[char], segmented: bool) -> Vec<Span> {
    let m = marker.len();
    if m == 0 || m > hyp.len() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for start in 0..=hyp.len() - m {
        if hyp[start..start + m] != *marker {
            continue;
        }
        if segmented {
            let left_ok = !is_word_char(marker[0]) || start == 0 || !is_word_char(hyp[start - 1]);
            let right_ok = !is_word_char(marker[m - 1]) || start + m == hyp.len() || !is_word_char(hyp[start + m]);
            if !(left_ok && right_ok) {
                continue;
            }
        }
        out.push((start, start + m));
    }
    out
}

/// Claims non-overlapping target spans, longest marker first, then left to
/// right within a marker.
pub fn claim_target_spans(hyp: &[char], targets: &[Vec<char>], segmented: bool) -> Vec<Span> {
    let mut order: Vec<&Vec<char>> = targets.iter().filter(|t| !t.is_empty()).collect();
    order.sort_by_key(|m| std::cmp::Reverse(m.len()));
    let mut claimed: Vec<Span> = Vec::new();
    for marker in order {
        for (s, e) in occurrences(hyp, marker, segmented) {
            if claimed.iter().all(|&(cs, ce)| e <= cs || s >= ce) {
                claimed.push((s, e));
            }
        }
    }
    claimed.sort_unstable();
    claimed
}

/// Detailed outcome of marker matching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexicalMatch {
    pub target_spans: Vec<Span>,
    pub opposite_spans: Vec<Span>,
}

impl LexicalMatch {
    pub fn is_correct(&self) -> bool {
        !self.target_spans.is_empty() && self.opposite_spans.is_empty()
    }
}

pub fn match_markers(hypothesis: &str, target_markers: &[String], opposite_markers: &[String], lang: &str) -> LexicalMatch {
    let segmented = !is_unsegmented(lang);
    let hyp: Vec<char> = nfc(hypothesis).chars().collect();
    let prep = |ms: &[String]| -> Vec<Vec<char>> { ms.iter().map(|m| nfc(m).chars().collect()).collect() };
    let targets = prep(target_markers);
    let opposites = prep(opposite_markers);

    let target_spans = claim_target_spans(&hyp, &targets, segmented);
    let mut opposite_spans: Vec<Span> = opposites
        .iter()
        .flat_map(|m| occurrences(&hyp, m, segmented))
        .filter(|&(s, e)| !target_spans.iter().any(|&(ts, te)| ts <= s && e <= te))
        .collect();
    opposite_spans.sort_unstable();
    opposite_spans.dedup();
    LexicalMatch { target_spans, opposite_spans }
}

/// True iff at least one target marker matched and no unsubsumed opposite
/// marker did.
pub fn lexical_accuracy(hypothesis: &str, target_markers: &[String], opposite_markers: &[String], lang: &str) -> bool {
    match_markers(hypothesis, target_markers, opposite_markers, lang).is_correct()
}
