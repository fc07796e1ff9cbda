//! Attribute-annotated parallel data and the `tsv-v1` pool format.
//!
//! A pool file is UTF-8, tab separated, with the header
//!
//! ```text
//! id  source  target  tgt_lang  task  attribute  markers  opposite_markers
//! ```
//!
//! Marker lists are `;`-joined with `\;` escaping. Tabs, newlines, carriage
//! returns and backslashes inside fields are written as `\t`, `\n`, `\r` and
//! `\\`; a field's leading `#` as `\#`. Lines starting with `#` and blank
//! lines are ignored. An empty `id` field is replaced by `L<line number>`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{escape_field, nfc, unescape_field};

pub const TSV_V1_HEADER: [&str; 8] = [
    "id",
    "source",
    "target",
    "tgt_lang",
    "task",
    "attribute",
    "markers",
    "opposite_markers",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Formality,
    Gender,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Formality => "formality",
            Task::Gender => "gender",
        }
    }

    /// The two attribute values legal for this task.
    pub fn attributes(self) -> [AttributeValue; 2] {
        match self {
            Task::Formality => [AttributeValue::Formal, AttributeValue::Informal],
            Task::Gender => [AttributeValue::Feminine, AttributeValue::Masculine],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "formality" => Ok(Task::Formality),
            "gender" => Ok(Task::Gender),
            other => Err(other.to_string()),
        }
    }
}

/// A target attribute. Each value belongs to exactly one task, so an
/// illegal (task, value) pair cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeValue {
    Formal,
    Informal,
    Feminine,
    Masculine,
}

impl AttributeValue {
    pub fn task(self) -> Task {
        match self {
            AttributeValue::Formal | AttributeValue::Informal => Task::Formality,
            AttributeValue::Feminine | AttributeValue::Masculine => Task::Gender,
        }
    }

    pub fn opposite(self) -> AttributeValue {
        match self {
            AttributeValue::Formal => AttributeValue::Informal,
            AttributeValue::Informal => AttributeValue::Formal,
            AttributeValue::Feminine => AttributeValue::Masculine,
            AttributeValue::Masculine => AttributeValue::Feminine,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AttributeValue::Formal => "formal",
            AttributeValue::Informal => "informal",
            AttributeValue::Feminine => "feminine",
            AttributeValue::Masculine => "masculine",
        }
    }

    /// Parses a value and checks that it belongs to `task`.
    pub fn parse_for(task: Task, token: &str) -> Option<AttributeValue> {
        token.parse::<AttributeValue>().ok().filter(|a| a.task() == task)
    }
}

impl fmt::Display for AttributeValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttributeValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "formal" => Ok(AttributeValue::Formal),
            "informal" => Ok(AttributeValue::Informal),
            "feminine" | "female" => Ok(AttributeValue::Feminine),
            "masculine" | "male" => Ok(AttributeValue::Masculine),
            other => Err(other.to_string()),
        }
    }
}

/// One labeled translation with its gold attribute spans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeExample {
    pub id: String,
    pub source_text: String,
    pub target_text: String,
    pub source_lang: String,
    pub target_lang: String,
    pub attribute: AttributeValue,
    /// Verbatim spans of `target_text` that realize the attribute.
    pub markers: Vec<String>,
    /// Spans of the contrastive (opposite-attribute) reference.
    pub opposite_markers: Vec<String>,
}

impl AttributeExample {
    pub fn task(&self) -> Task {
        self.attribute.task()
    }

    /// Checks the per-example invariants, returning the first violation.
    pub fn validate(&self) -> Result<(), ExampleViolation> {
        if self.source_text.trim().is_empty() {
            return Err(ExampleViolation::EmptyField("source"));
        }
        if self.target_text.trim().is_empty() {
            return Err(ExampleViolation::EmptyField("target"));
        }
        for m in self.markers.iter().chain(&self.opposite_markers) {
            if m.is_empty() {
                return Err(ExampleViolation::EmptyMarker);
            }
        }
        let target = nfc(&self.target_text);
        for m in &self.markers {
            if !target.contains(nfc(m).as_str()) {
                return Err(ExampleViolation::MarkerNotInTarget(m.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExampleViolation {
    EmptyField(&'static str),
    EmptyMarker,
    MarkerNotInTarget(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PoolError {
    #[error("input is not valid UTF-8: {0}")]
    Encoding(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("bad header: expected `{}`, found `{found}`", TSV_V1_HEADER.join("\\t"))]
    BadHeader { found: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: marker `{marker}` does not occur in the target")]
    MarkerNotInTarget { line: usize, marker: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: unknown task or attribute `{token}`")]
    UnknownAttribute { line: usize, token: String },
}

/// Every problem found while parsing a pool, in line order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} error(s) in pool; first: {}", .0.len(), .0[0])]
pub struct PoolErrors(pub Vec<PoolError>);

/// The labeled pool with language / attribute views.
///
/// Index maps hold positions into `examples`; every example appears in
/// exactly one bucket of each map.
#[derive(Debug, Clone, Default)]
pub struct ExamplePool {
    examples: Vec<AttributeExample>,
    by_id: HashMap<String, usize>,
    by_lang: BTreeMap<String, Vec<usize>>,
    by_attribute: BTreeMap<AttributeValue, Vec<usize>>,
    by_cell: BTreeMap<(String, AttributeValue), Vec<usize>>,
}

impl PartialEq for ExamplePool {
    fn eq(&self, other: &Self) -> bool {
        self.examples == other.examples
    }
}

impl ExamplePool {
    /// Builds a pool from already-constructed examples. Runs the same
    /// validation as [`parse_pool`], using 1-based positions as line numbers.
    pub fn from_examples(examples: Vec<AttributeExample>) -> Result<Self, PoolErrors> {
        let mut errors = Vec::new();
        for (i, ex) in examples.iter().enumerate() {
            if let Err(v) = ex.validate() {
                errors.push(violation_error(i + 1, v));
            }
        }
        let pool = Self::index(examples, &mut errors);
        if errors.is_empty() {
            Ok(pool)
        } else {
            Err(PoolErrors(errors))
        }
    }

    fn index(examples: Vec<AttributeExample>, errors: &mut Vec<PoolError>) -> Self {
        let mut pool = ExamplePool::default();
        for (pos, ex) in examples.iter().enumerate() {
            if pool.by_id.insert(ex.id.clone(), pos).is_some() {
                errors.push(PoolError::DuplicateId(ex.id.clone()));
            }
            pool.by_lang.entry(ex.target_lang.clone()).or_default().push(pos);
            pool.by_attribute.entry(ex.attribute).or_default().push(pos);
            pool.by_cell
                .entry((ex.target_lang.clone(), ex.attribute))
                .or_default()
                .push(pos);
        }
        pool.examples = examples;
        pool
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn examples(&self) -> &[AttributeExample] {
        &self.examples
    }

    pub fn get(&self, pos: usize) -> Option<&AttributeExample> {
        self.examples.get(pos)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&AttributeExample> {
        self.position(id).map(|p| &self.examples[p])
    }

    /// Target languages present, in sorted order.
    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_lang.keys().map(String::as_str)
    }

    pub fn positions_for_lang(&self, lang: &str) -> &[usize] {
        self.by_lang.get(lang).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn positions_for_attribute(&self, attribute: AttributeValue) -> &[usize] {
        self.by_attribute.get(&attribute).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn positions_for_cell(&self, lang: &str, attribute: AttributeValue) -> &[usize] {
        self.by_cell
            .get(&(lang.to_string(), attribute))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn cells(&self) -> impl Iterator<Item = (&(String, AttributeValue), &Vec<usize>)> {
        self.by_cell.iter()
    }

    pub fn stats(&self) -> PoolStats {
        pool_stats(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct PoolStats {
    pub cells: BTreeMap<(String, AttributeValue), usize>,
    pub total: usize,
}

impl fmt::Display for PoolStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ((lang, attr), n) in &self.cells {
            writeln!(f, "{lang}\t{attr}\t{n}")?;
        }
        write!(f, "total\t{}", self.total)
    }
}

pub fn pool_stats(pool: &ExamplePool) -> PoolStats {
    let cells: BTreeMap<_, _> = pool
        .by_cell
        .iter()
        .map(|(key, rows)| (key.clone(), rows.len()))
        .collect();
    PoolStats { total: pool.len(), cells }
}

fn violation_error(line: usize, v: ExampleViolation) -> PoolError {
    match v {
        ExampleViolation::EmptyField(field) => PoolError::MalformedRow {
            line,
            reason: format!("{field} is empty"),
        },
        ExampleViolation::EmptyMarker => PoolError::MalformedRow {
            line,
            reason: "empty marker string".into(),
        },
        ExampleViolation::MarkerNotInTarget(marker) => PoolError::MarkerNotInTarget { line, marker },
    }
}

/// Reads a `tsv-v1` pool from any byte stream.
pub fn parse_pool<R: Read>(mut stream: R) -> Result<ExamplePool, PoolErrors> {
    let mut bytes = Vec::new();
    stream
        .read_to_end(&mut bytes)
        .map_err(|e| PoolErrors(vec![PoolError::Io(e.to_string())]))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| PoolErrors(vec![PoolError::Encoding(e.to_string())]))?;
    parse_pool_str(&text)
}

pub fn parse_pool_str(text: &str) -> Result<ExamplePool, PoolErrors> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let header = lines
        .by_ref()
        .find(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
    match header {
        Some((_, h)) if h.split('\t').eq(TSV_V1_HEADER.iter().copied()) => {}
        Some((_, h)) => return Err(PoolErrors(vec![PoolError::BadHeader { found: h.to_string() }])),
        None => return Err(PoolErrors(vec![PoolError::BadHeader { found: String::new() }])),
    }

    let mut errors = Vec::new();
    let mut examples = Vec::new();
    for (line_no, line) in lines {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        match parse_row(line_no, line) {
            Ok(ex) => match ex.validate() {
                Ok(()) => examples.push(ex),
                Err(v) => errors.push(violation_error(line_no, v)),
            },
            Err(e) => errors.push(e),
        }
    }
    let pool = ExamplePool::index(examples, &mut errors);
    if errors.is_empty() {
        Ok(pool)
    } else {
        Err(PoolErrors(errors))
    }
}

fn parse_row(line: usize, row: &str) -> Result<AttributeExample, PoolError> {
    let fields: Vec<&str> = row.split('\t').collect();
    if fields.len() != TSV_V1_HEADER.len() {
        return Err(PoolError::MalformedRow {
            line,
            reason: format!("expected {} fields, found {}", TSV_V1_HEADER.len(), fields.len()),
        });
    }
    let malformed = |reason: String| PoolError::MalformedRow { line, reason };
    let field = |i: usize| unescape_field(fields[i]).map_err(malformed);

    let task: Task = fields[4].parse().map_err(|token| PoolError::UnknownAttribute { line, token })?;
    let attribute = AttributeValue::parse_for(task, fields[5]).ok_or_else(|| PoolError::UnknownAttribute {
        line,
        token: fields[5].to_string(),
    })?;
    let tgt_lang = field(3)?;
    if tgt_lang.trim().is_empty() {
        return Err(malformed("tgt_lang is empty".into()));
    }
    let id = match field(0)? {
        id if id.is_empty() => format!("L{line}"),
        id => id,
    };
    Ok(AttributeExample {
        id,
        source_text: field(1)?,
        target_text: field(2)?,
        source_lang: "en".to_string(),
        target_lang: tgt_lang,
        attribute,
        markers: parse_marker_list(fields[6]).map_err(malformed)?,
        opposite_markers: parse_marker_list(fields[7]).map_err(malformed)?,
    })
}

fn parse_marker_list(raw: &str) -> Result<Vec<String>, String> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let mut items = Vec::new();
    let mut current = String::new();
    let mut escaped = false;
    for c in raw.chars() {
        if escaped {
            current.push('\\');
            current.push(c);
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == ';' {
            items.push(unescape_field(&current)?);
            current.clear();
        } else {
            current.push(c);
        }
    }
    if escaped {
        return Err("dangling backslash".into());
    }
    items.push(unescape_field(&current)?);
    Ok(items)
}

fn escape_marker_list(items: &[String]) -> String {
    items
        .iter()
        .map(|m| escape_field(m).replace(';', "\\;"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Serializes a pool to `tsv-v1`. Ids are always written explicitly.
pub fn write_pool(pool: &ExamplePool) -> String {
    let mut out = TSV_V1_HEADER.join("\t");
    out.push('\n');
    for ex in pool.examples() {
        let row = [
            escape_field(&ex.id),
            escape_field(&ex.source_text),
            escape_field(&ex.target_text),
            escape_field(&ex.target_lang),
            ex.task().as_str().to_string(),
            ex.attribute.as_str().to_string(),
            escape_marker_list(&ex.markers),
            escape_marker_list(&ex.opposite_markers),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        TSV_V1_HEADER.join("\t")
    }

    #[test]
    fn accepts_table_one_formal_japanese_row() {
        let text = format!(
            "{}\ne1\tOK, then please follow me to your table.\tではテーブルまで私について来てください。\tja\tformality\tformal\tついて来てください\tついて来て\n",
            header()
        );
        let pool = parse_pool(text.as_bytes()).unwrap();
        assert_eq!(pool.len(), 1);
        let ex = pool.by_id("e1").unwrap();
        assert_eq!(ex.attribute, AttributeValue::Formal);
        assert_eq!(ex.markers, vec!["ついて来てください"]);
        assert_eq!(ex.opposite_markers, vec!["ついて来て"]);
        assert_eq!(ex.source_lang, "en");
    }

    #[test]
    fn rejects_marker_missing_from_target() {
        let text = format!(
            "{}\ng1\tAfter retiring from teaching, Cook became a novelist.\tNadat ze stopte met lesgeven, werd Cook schrijfster.\tnl\tgender\tmasculine\thij\tze\n",
            header()
        );
        let err = parse_pool(text.as_bytes()).unwrap_err();
        assert_eq!(
            err.0,
            vec![PoolError::MarkerNotInTarget { line: 2, marker: "hij".into() }]
        );
    }

    #[test]
    fn empty_stream_with_header_gives_empty_pool() {
        let pool = parse_pool(format!("{}\n", header()).as_bytes()).unwrap();
        assert!(pool.is_empty());
        assert_eq!(pool.stats().total, 0);
        assert!(pool.stats().cells.is_empty());
    }

    #[test]
    fn reports_every_bad_row_in_one_pass() {
        let text = format!(
            "{h}\n\
             a\tHi.\tHola.\tes\tformality\tformal\t\t\n\
             b\tHi.\tHola.\tes\tformality\tpolite\t\t\n\
             # comment\n\
             a\tHi.\tHola.\tes\tformality\tinformal\t\t\n\
             c\tHi.\tHola.\tes\tformality\n\
             d\t \tHola.\tes\tgender\tfeminine\t\t\n\
             e\tHi.\tHola.\tes\tstyle\tformal\t\t\n",
            h = header()
        );
        let errs = parse_pool(text.as_bytes()).unwrap_err().0;
        assert!(matches!(&errs[0], PoolError::UnknownAttribute { line: 3, token } if token == "polite"));
        assert!(matches!(&errs[1], PoolError::MalformedRow { line: 6, .. }));
        assert!(matches!(&errs[2], PoolError::MalformedRow { line: 7, .. }));
        assert!(matches!(&errs[3], PoolError::UnknownAttribute { line: 8, token } if token == "style"));
        assert_eq!(errs[4], PoolError::DuplicateId("a".into()));
        assert_eq!(errs.len(), 5);
    }

    #[test]
    fn missing_id_uses_line_number() {
        let text = format!("{}\n# c\n\tHi.\tHola.\tes\tformality\tformal\t\t\n", header());
        let pool = parse_pool(text.as_bytes()).unwrap();
        assert_eq!(pool.examples()[0].id, "L3");
    }

    #[test]
    fn bad_header_rejected() {
        let err = parse_pool("id\tsource\n".as_bytes()).unwrap_err();
        assert!(matches!(err.0[0], PoolError::BadHeader { .. }));
    }

    #[test]
    fn escapes_in_fields_and_markers() {
        let text = format!(
            "{}\nx\ta\\tb\tuno;dos\\ntres\\\\\tes\tformality\tformal\tuno\\;dos;tres\\\\\t\n",
            header()
        );
        let pool = parse_pool(text.as_bytes()).unwrap();
        let ex = &pool.examples()[0];
        assert_eq!(ex.source_text, "a\tb");
        assert_eq!(ex.target_text, "uno;dos\ntres\\");
        assert_eq!(ex.markers, vec!["uno;dos", "tres\\"]);
        let again = parse_pool(write_pool(&pool).as_bytes()).unwrap();
        assert_eq!(again, pool);
    }

    #[test]
    fn marker_containment_compares_nfc_forms() {
        // target in NFD, marker in NFC
        let target = "Vous e\u{301}tes";
        let ex = AttributeExample {
            id: "n".into(),
            source_text: "You are".into(),
            target_text: target.into(),
            source_lang: "en".into(),
            target_lang: "fr".into(),
            attribute: AttributeValue::Formal,
            markers: vec!["\u{e9}tes".into()],
            opposite_markers: vec![],
        };
        assert!(ex.validate().is_ok());
        assert_eq!(ex.target_text, target);
    }

    #[test]
    fn stats_cover_each_cell() {
        let mut examples = Vec::new();
        for (i, (lang, attr)) in [
            ("es", AttributeValue::Formal),
            ("es", AttributeValue::Informal),
            ("fr", AttributeValue::Formal),
            ("fr", AttributeValue::Informal),
        ]
        .into_iter()
        .enumerate()
        {
            examples.push(AttributeExample {
                id: format!("x{i}"),
                source_text: "Hello".into(),
                target_text: "Bonjour".into(),
                source_lang: "en".into(),
                target_lang: lang.into(),
                attribute: attr,
                markers: vec![],
                opposite_markers: vec![],
            });
        }
        let stats = ExamplePool::from_examples(examples).unwrap().stats();
        assert_eq!(stats.total, 4);
        assert_eq!(stats.cells.len(), 4);
        assert!(stats.cells.values().all(|&n| n == 1));
    }
}
