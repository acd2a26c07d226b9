//! Document and annotation model shared by every stage, plus the
//! span <-> IOB2 conversions.
//!
//! All offsets are half-open Unicode code-point indices into the original
//! document text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::LabelSet;

/// Byte offsets of every code point of a string, plus the total length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharIndex {
    bytes: Vec<usize>,
}

impl CharIndex {
    pub fn new(text: &str) -> Self {
        let mut bytes: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        bytes.push(text.len());
        Self { bytes }
    }

    pub fn char_len(&self) -> usize {
        self.bytes.len() - 1
    }

    pub fn byte(&self, char_offset: usize) -> usize {
        self.bytes[char_offset]
    }

    /// Code-point offset of a byte offset that lies on a char boundary.
    pub fn char_of_byte(&self, byte: usize) -> usize {
        self.bytes
            .binary_search(&byte)
            .expect("byte offset on a char boundary")
    }

    pub fn slice<'a>(&self, text: &'a str, start: usize, end: usize) -> Option<&'a str> {
        if start > end || end > self.char_len() {
            return None;
        }
        Some(&text[self.bytes[start]..self.bytes[end]])
    }
}

/// Slices `text` by code-point offsets without building an index.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut it = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let b0 = it.nth(start).unwrap_or(text.len());
    let b1 = if end > start {
        it.nth(end - start - 1).unwrap_or(text.len())
    } else {
        b0
    };
    &text[b0..b1]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    doc_id: String,
    text: String,
    language_code: String,
    index: CharIndex,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        language_code: impl Into<String>,
    ) -> Self {
        let text = text.into();
        let index = CharIndex::new(&text);
        Self {
            doc_id: doc_id.into(),
            text,
            language_code: language_code.into(),
            index,
        }
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn language_code(&self) -> &str {
        &self.language_code
    }

    pub fn index(&self) -> &CharIndex {
        &self.index
    }

    pub fn char_len(&self) -> usize {
        self.index.char_len()
    }

    pub fn slice(&self, start: usize, end: usize) -> Option<&str> {
        self.index.slice(&self.text, start, end)
    }

    pub fn span_text(&self, span: &EntitySpan) -> Option<&str> {
        self.slice(span.start, span.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub start: usize,
    pub end: usize,
}

impl Sentence {
    /// Builds a sentence whose range is the hull of its tokens.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let start = tokens.first().map_or(0, |t| t.start);
        let end = tokens.last().map_or(0, |t| t.end);
        Self { tokens, start, end }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Source {
    Rule,
    Model,
    Llm,
    Gold,
    Synth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub source: Source,
    #[serde(default = "one")]
    pub confidence: f64,
}

fn one() -> f64 {
    1.0
}

impl EntitySpan {
    pub fn new(label: impl Into<String>, start: usize, end: usize, source: Source) -> Self {
        Self {
            label: label.into(),
            start,
            end,
            source,
            confidence: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// `(label, start, end)`, the identity used for strict matching.
    pub fn key(&self) -> (&str, usize, usize) {
        (&self.label, self.start, self.end)
    }
}

/// One IOB2 tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

pub type TagSequence = Vec<Tag>;

impl Tag {
    pub fn label(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(l) | Tag::I(l) => Some(l),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(l) => write!(f, "B-{l}"),
            Tag::I(l) => write!(f, "I-{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed tag {0:?}")]
pub struct TagParseError(pub String);

impl FromStr for Tag {
    type Err = TagParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "O" {
            return Ok(Tag::O);
        }
        let (prefix, label) = s.split_once('-').ok_or_else(|| TagParseError(s.into()))?;
        // Internal spaces are legal ("MEDICAL RECORD"); other whitespace is not.
        if label.trim() != label || label.is_empty() || label.chars().any(|c| c.is_whitespace() && c != ' ') {
            return Err(TagParseError(s.into()));
        }
        match prefix {
            "B" => Ok(Tag::B(label.to_string())),
            "I" => Ok(Tag::I(label.to_string())),
            _ => Err(TagParseError(s.into())),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repair {
    /// Every `I-L` must continue a chunk of label `L`.
    Strict,
    /// An `I-L` that does not continue an `L` chunk starts a new one.
    #[default]
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("spans {first} and {second} share token {token}")]
    Overlap {
        first: usize,
        second: usize,
        token: usize,
    },
    #[error("span {span} [{start}, {end}) does not align with token boundaries")]
    Alignment { span: usize, start: usize, end: usize },
    #[error("invalid tag {tag} at position {position}")]
    InvalidTag { position: usize, tag: String },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("{tags} tags for {tokens} tokens")]
    LengthMismatch { tokens: usize, tags: usize },
}

/// Converts token-aligned, non-overlapping spans into an IOB2 tag sequence.
pub fn spans_to_bio(sentence: &Sentence, spans: &[EntitySpan]) -> Result<TagSequence, AnnotationError> {
    let mut tags = vec![Tag::O; sentence.tokens.len()];
    let mut owner: Vec<Option<usize>> = vec![None; sentence.tokens.len()];
    for (si, span) in spans.iter().enumerate() {
        let misaligned = AnnotationError::Alignment {
            span: si,
            start: span.start,
            end: span.end,
        };
        let first = sentence
            .tokens
            .binary_search_by_key(&span.start, |t| t.start)
            .map_err(|_| misaligned.clone())?;
        let last = sentence.tokens[first..]
            .iter()
            .position(|t| t.end >= span.end)
            .map(|p| first + p)
            .ok_or_else(|| misaligned.clone())?;
        if sentence.tokens[last].end != span.end {
            return Err(misaligned);
        }
        for ti in first..=last {
            if let Some(prev) = owner[ti] {
                return Err(AnnotationError::Overlap {
                    first: prev,
                    second: si,
                    token: ti,
                });
            }
            owner[ti] = Some(si);
            tags[ti] = if ti == first {
                Tag::B(span.label.clone())
            } else {
                Tag::I(span.label.clone())
            };
        }
    }
    Ok(tags)
}

/// Decodes an IOB2 tag sequence into spans over the sentence's tokens.
///
/// When `labels` is given, every tag label must belong to it.
pub fn bio_to_spans(
    sentence: &Sentence,
    tags: &[Tag],
    repair: Repair,
    labels: Option<&LabelSet>,
    source: Source,
) -> Result<Vec<EntitySpan>, AnnotationError> {
    if tags.len() != sentence.tokens.len() {
        return Err(AnnotationError::LengthMismatch {
            tokens: sentence.tokens.len(),
            tags: tags.len(),
        });
    }
    let mut spans = Vec::new();
    // (label, first token, last token) of the chunk being extended.
    let mut open: Option<(&str, usize, usize)> = None;
    let close = |open: &mut Option<(&str, usize, usize)>, spans: &mut Vec<EntitySpan>| {
        if let Some((label, first, last)) = open.take() {
            spans.push(EntitySpan::new(
                label,
                sentence.tokens[first].start,
                sentence.tokens[last].end,
                source,
            ));
        }
    };
    for (i, tag) in tags.iter().enumerate() {
        if let (Some(ls), Some(label)) = (labels, tag.label()) {
            if !ls.contains(label) {
                return Err(AnnotationError::UnknownLabel(label.to_string()));
            }
        }
        match tag {
            Tag::O => close(&mut open, &mut spans),
            Tag::B(label) => {
                close(&mut open, &mut spans);
                open = Some((label, i, i));
            }
            Tag::I(label) => match &mut open {
                Some((cur, _, last)) if *cur == label.as_str() => *last = i,
                _ => {
                    if repair == Repair::Strict {
                        return Err(AnnotationError::InvalidTag {
                            position: i,
                            tag: tag.to_string(),
                        });
                    }
                    close(&mut open, &mut spans);
                    open = Some((label, i, i));
                }
            },
        }
    }
    close(&mut open, &mut spans);
    Ok(spans)
}

/// Checks strict IOB2 validity without decoding.
pub fn first_invalid_tag(tags: &[Tag]) -> Option<usize> {
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            Tag::O => prev = None,
            Tag::B(l) => prev = Some(l),
            Tag::I(l) => {
                if prev != Some(l.as_str()) {
                    return Some(i);
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    OutOfBounds { span: usize, end: usize, text_len: usize },
    Empty { span: usize },
    Overlap { first: usize, second: usize },
    UnknownLabel { span: usize, label: String },
    BadConfidence { span: usize },
    CrossesSentence { span: usize },
}

/// Reports structural problems with a span list. An empty result means the
/// annotation is valid.
pub fn validate_spans(
    doc: &Document,
    spans: &[EntitySpan],
    labels: Option<&LabelSet>,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let len = doc.char_len();
    for (i, s) in spans.iter().enumerate() {
        if s.end <= s.start {
            out.push(Violation::Empty { span: i });
        }
        if s.end > len {
            out.push(Violation::OutOfBounds {
                span: i,
                end: s.end,
                text_len: len,
            });
        }
        if let Some(ls) = labels {
            if !ls.contains(&s.label) {
                out.push(Violation::UnknownLabel {
                    span: i,
                    label: s.label.clone(),
                });
            }
        }
        if !(0.0..=1.0).contains(&s.confidence) {
            out.push(Violation::BadConfidence { span: i });
        }
    }
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by_key(|&i| (spans[i].start, spans[i].end));
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if spans[j].start >= spans[i].end {
                break;
            }
            if spans[i].overlaps(&spans[j]) {
                out.push(Violation::Overlap {
                    first: i.min(j),
                    second: i.max(j),
                });
            }
        }
    }
    out
}

/// Flags spans that are not contained in a single sentence.
pub fn sentence_violations(sentences: &[Sentence], spans: &[EntitySpan]) -> Vec<Violation> {
    spans
        .iter()
        .enumerate()
        .filter(|(_, s)| {
            !sentences
                .iter()
                .any(|sent| sent.start <= s.start && s.end <= sent.end)
        })
        .map(|(i, _)| Violation::CrossesSentence { span: i })
        .collect()
}

/// Sorts spans by start and returns `true` when no two overlap.
pub fn is_non_overlapping(spans: &[EntitySpan]) -> bool {
    let mut v: Vec<(usize, usize)> = spans.iter().map(|s| (s.start, s.end)).collect();
    v.sort_unstable();
    v.windows(2).all(|w| w[0].1 <= w[1].0)
}
