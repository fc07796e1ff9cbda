//! Prompt rendering for attribute-controlled translation.
//!
//! A prompt is a sequence of in-context blocks followed by a query block,
//! joined by single newlines. Each block is the task's example template;
//! in `mark` and `ramp` modes it is followed by a marking sentence naming
//! the gold attribute spans. The query block stops right after the colon
//! that introduces the translation, plus one space.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttributeExample, AttributeValue, Task};
use crate::retrieval::{RankedExample, Selection};

pub const FORMALITY_EXAMPLE_BLOCK: &str =
    "Here is a sentence: {x} Here is its {l} translation written in a {a} style: {y}";
pub const FORMALITY_MARKING: &str =
    " The translated sentence conveys a {a} style by using words such as {markers}.";
pub const GENDER_EXAMPLE_BLOCK: &str =
    "Here is a sentence: {x} Here is its {l} translation in which the person is {a}: {y}";
pub const GENDER_MARKING: &str =
    " In the translation, the {a} gender of the person is made explicit by words such as {markers}.";

pub const BLOCK_SEPARATOR: &str = "\n";
pub const NEXT_BLOCK_PREFIX: &str = "Here is a sentence:";

const LANGUAGES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("hi", "Hindi"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("nl", "Dutch"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),
    #[error("attribute marking needs at least one marker")]
    EmptyMarkers,
    #[error("template is for {template} but the example is {example}")]
    TaskMismatch { template: Task, example: Task },
    #[error("in-context example `{id}` has attribute {found}, prompt asks for {expected}")]
    MixedAttributes {
        id: String,
        expected: AttributeValue,
        found: AttributeValue,
    },
    #[error("template error: {0}")]
    Template(String),
}

/// All language codes with an English name.
pub fn supported_languages() -> impl Iterator<Item = &'static str> {
    LANGUAGES.iter().map(|(code, _)| *code)
}

pub fn language_name(code: &str) -> Result<&'static str, PromptError> {
    LANGUAGES
        .iter()
        .find(|(c, _)| *c == code)
        .map(|(_, name)| *name)
        .ok_or_else(|| PromptError::UnknownLanguage(code.to_string()))
}

/// `'w1', 'w2', ...` with straight quotes, in the given order.
pub fn marker_phrase<S: AsRef<str>>(markers: &[S]) -> Result<String, PromptError> {
    if markers.is_empty() {
        return Err(PromptError::EmptyMarkers);
    }
    Ok(markers
        .iter()
        .map(|m| format!("'{}'", m.as_ref()))
        .collect::<Vec<_>>()
        .join(", "))
}

/// Surface word used for an attribute inside prompts.
pub fn attribute_word(attribute: AttributeValue) -> &'static str {
    match attribute {
        AttributeValue::Formal => "formal",
        AttributeValue::Informal => "informal",
        AttributeValue::Feminine => "female",
        AttributeValue::Masculine => "male",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Random examples, no marking.
    Base,
    /// Random examples with marking.
    Mark,
    /// Similar examples with marking.
    Ramp,
}

impl PromptMode {
    pub fn marks(self) -> bool {
        !matches!(self, PromptMode::Base)
    }

    pub fn uses_similarity(self) -> bool {
        matches!(self, PromptMode::Ramp)
    }

    pub fn selection(self, seed: u64) -> Selection {
        if self.uses_similarity() {
            Selection::Similarity
        } else {
            Selection::Random { seed }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Base => "base",
            PromptMode::Mark => "mark",
            PromptMode::Ramp => "ramp",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "base" => Ok(PromptMode::Base),
            "mark" | "+mark" => Ok(PromptMode::Mark),
            "ramp" => Ok(PromptMode::Ramp),
            other => Err(format!("unknown prompt mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Source,
    Language,
    Attribute,
    Target,
    Markers,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        Some(match name {
            "x" => Slot::Source,
            "l" => Slot::Language,
            "a" => Slot::Attribute,
            "y" => Slot::Target,
            "markers" => Slot::Markers,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

/// A parsed template string. `{x}`, `{l}`, `{a}`, `{y}` and `{markers}` are
/// slots; `{{` and `}}` are literal braces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl Template {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = source.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                    literal.push('{');
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                    literal.push('}');
                }
                '{' => {
                    let name: String = chars.by_ref().take_while(|&c| c != '}').collect();
                    let slot = Slot::parse(&name)
                        .ok_or_else(|| PromptError::Template(format!("unknown slot `{{{name}}}`")))?;
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(slot));
                }
                '}' => return Err(PromptError::Template("unmatched `}`".into())),
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(Self { source: source.to_string(), segments })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn render(&self, out: &mut String, values: &SlotValues<'_>) {
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(slot) => out.push_str(values.get(*slot)),
            }
        }
    }
}

struct SlotValues<'a> {
    source: &'a str,
    language: &'a str,
    attribute: &'a str,
    target: &'a str,
    markers: &'a str,
}

impl SlotValues<'_> {
    fn get(&self, slot: Slot) -> &str {
        match slot {
            Slot::Source => self.source,
            Slot::Language => self.language,
            Slot::Attribute => self.attribute,
            Slot::Target => self.target,
            Slot::Markers => self.markers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskTemplate {
    pub task: Task,
    example_block: Template,
    marking_sentence: Template,
    query_block: Template,
    stop_markers: Vec<String>,
}

impl TaskTemplate {
    pub fn new(
        task: Task,
        example_block: &str,
        marking_sentence: &str,
        stop_markers: Vec<String>,
    ) -> Result<Self, PromptError> {
        let example_block = Template::parse(example_block)?;
        let marking_sentence = Template::parse(marking_sentence)?;
        let query_block = derive_query_block(&example_block)?;
        Ok(Self { task, example_block, marking_sentence, query_block, stop_markers })
    }

    pub fn default_for(task: Task) -> Self {
        let (block, marking, stop) = match task {
            Task::Formality => (FORMALITY_EXAMPLE_BLOCK, FORMALITY_MARKING, "The translated sentence conveys"),
            Task::Gender => (GENDER_EXAMPLE_BLOCK, GENDER_MARKING, "In the translation, the"),
        };
        Self::new(task, block, marking, vec![NEXT_BLOCK_PREFIX.to_string(), stop.to_string()])
            .expect("built-in templates are valid")
    }

    pub fn example_block(&self) -> &str {
        self.example_block.source()
    }

    pub fn marking_sentence(&self) -> &str {
        self.marking_sentence.source()
    }

    /// Strings at which a completion is cut (see
    /// [`crate::generation::extract_translation`]).
    pub fn stop_markers(&self) -> &[String] {
        &self.stop_markers
    }

    fn check_task(&self, attribute: AttributeValue) -> Result<(), PromptError> {
        if attribute.task() != self.task {
            return Err(PromptError::TaskMismatch { template: self.task, example: attribute.task() });
        }
        Ok(())
    }
}

// The query block is the example block cut right after the colon preceding
// {y}, followed by one space.
fn derive_query_block(example_block: &Template) -> Result<Template, PromptError> {
    let y_at = example_block
        .segments
        .iter()
        .position(|s| *s == Segment::Slot(Slot::Target))
        .ok_or_else(|| PromptError::Template("example block has no {y} slot".into()))?;
    let mut segments = example_block.segments[..y_at].to_vec();
    match segments.last_mut() {
        Some(Segment::Literal(lit)) => {
            let trimmed = lit.trim_end();
            if !trimmed.ends_with(':') {
                return Err(PromptError::Template("{y} must follow a colon".into()));
            }
            let cut = trimmed.len();
            lit.truncate(cut);
            lit.push(' ');
        }
        _ => return Err(PromptError::Template("{y} must follow a colon".into())),
    }
    for seg in &segments {
        if matches!(seg, Segment::Slot(Slot::Markers) | Segment::Slot(Slot::Target)) {
            return Err(PromptError::Template("query block may only use {x}, {l}, {a}".into()));
        }
    }
    let mut source = String::new();
    for seg in &segments {
        match seg {
            Segment::Literal(s) => source.push_str(&s.replace('{', "{{").replace('}', "}}")),
            Segment::Slot(Slot::Source) => source.push_str("{x}"),
            Segment::Slot(Slot::Language) => source.push_str("{l}"),
            Segment::Slot(Slot::Attribute) => source.push_str("{a}"),
            Segment::Slot(_) => unreachable!(),
        }
    }
    Ok(Template { source, segments })
}

/// Templates keyed by task, with the built-in defaults as fallback.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<Task, TaskTemplate>,
}

#[derive(Deserialize)]
struct TemplateOverride {
    example_block: String,
    marking_sentence: String,
    #[serde(default)]
    stop_markers: Option<Vec<String>>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let templates = [Task::Formality, Task::Gender]
            .into_iter()
            .map(|t| (t, TaskTemplate::default_for(t)))
            .collect();
        Self { templates }
    }
}

impl TemplateSet {
    /// Applies a JSON override file of the form
    /// `{"formality": {"example_block": .., "marking_sentence": .., "stop_markers": [..]}}`.
    /// Tasks not mentioned keep their defaults.
    pub fn with_overrides_json(mut self, json: &str) -> Result<Self, PromptError> {
        let overrides: BTreeMap<Task, TemplateOverride> =
            serde_json::from_str(json).map_err(|e| PromptError::Template(e.to_string()))?;
        for (task, o) in overrides {
            let stop = o
                .stop_markers
                .unwrap_or_else(|| TaskTemplate::default_for(task).stop_markers.clone());
            let t = TaskTemplate::new(task, &o.example_block, &o.marking_sentence, stop)?;
            self.templates.insert(task, t);
        }
        Ok(self)
    }

    pub fn get(&self, task: Task) -> &TaskTemplate {
        &self.templates[&task]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub block_count: usize,
    pub input_example_ids: Vec<String>,
    pub target_lang_name: String,
    pub attribute_word: String,
}

/// Renders one in-context block (with the marking sentence when `mode` marks).
pub fn render_example_block(
    example: &AttributeExample,
    mode: PromptMode,
    template: &TaskTemplate,
) -> Result<String, PromptError> {
    let mut out = String::new();
    write_example_block(&mut out, example, mode, template)?;
    Ok(out)
}

fn write_example_block(
    out: &mut String,
    example: &AttributeExample,
    mode: PromptMode,
    template: &TaskTemplate,
) -> Result<(), PromptError> {
    template.check_task(example.attribute)?;
    let markers = if mode.marks() { marker_phrase(&example.markers)? } else { String::new() };
    let values = SlotValues {
        source: &example.source_text,
        language: language_name(&example.target_lang)?,
        attribute: attribute_word(example.attribute),
        target: &example.target_text,
        markers: &markers,
    };
    template.example_block.render(out, &values);
    if mode.marks() {
        template.marking_sentence.render(out, &values);
    }
    Ok(())
}

/// Renders the in-context blocks in the given order, then the query block.
pub fn render_prompt(
    input_text: &str,
    target_lang: &str,
    attribute: AttributeValue,
    examples: &[RankedExample],
    mode: PromptMode,
    template: &TaskTemplate,
) -> Result<RenderedPrompt, PromptError> {
    template.check_task(attribute)?;
    let lang_name = language_name(target_lang)?;
    let mut text = String::new();
    for r in examples {
        let ex = &r.example;
        template.check_task(ex.attribute)?;
        if ex.attribute != attribute {
            return Err(PromptError::MixedAttributes {
                id: ex.id.clone(),
                expected: attribute,
                found: ex.attribute,
            });
        }
        write_example_block(&mut text, ex, mode, template)?;
        text.push_str(BLOCK_SEPARATOR);
    }
    let values = SlotValues {
        source: input_text,
        language: lang_name,
        attribute: attribute_word(attribute),
        target: "",
        markers: "",
    };
    template.query_block.render(&mut text, &values);
    Ok(RenderedPrompt {
        text,
        block_count: examples.len(),
        input_example_ids: examples.iter().map(|r| r.example.id.clone()).collect(),
        target_lang_name: lang_name.to_string(),
        attribute_word: attribute_word(attribute).to_string(),
    })
}
