//! CoNLL-style BIO files and the span-JSON annotation format.
//!
//! Reading accepts any run of spaces or tabs between columns and takes the
//! first column as the token and the last as the tag. Writing is canonical:
//! `token<SPACE>tag`, a blank line after every sentence, LF endings.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{
    bio_to_spans, first_invalid_tag, spans_to_bio, AnnotationError, Document, EntitySpan, Repair,
    Sentence, Source, Tag, Token,
};
use crate::labels::LabelSet;

pub const DOCSTART: &str = "-DOCSTART-";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConllSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConllRecord {
    pub doc_id: Option<String>,
    pub sentences: Vec<ConllSentence>,
}

#[derive(Debug, Error)]
pub enum ConllError {
    #[error("line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("line {line}: invalid IOB2 tag {tag}")]
    InvalidTag { line: usize, tag: String },
    #[error("cannot write record {record}, sentence {sentence}: {detail}")]
    Write {
        record: usize,
        sentence: usize,
        detail: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses CoNLL text. Blank lines separate sentences and `-DOCSTART-` lines
/// open a new record; in STRICT mode every sentence must be valid IOB2.
pub fn read_conll<R: Read>(input: R, repair: Repair) -> Result<Vec<ConllRecord>, ConllError> {
    let mut reader = io::BufReader::new(input);
    let mut records: Vec<ConllRecord> = Vec::new();
    let mut current = ConllRecord::default();
    let mut have_current = false;
    let mut sentence = ConllSentence::default();
    // Line number of each tag in the open sentence, for error reporting.
    let mut tag_lines: Vec<usize> = Vec::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;

    let flush_sentence = |sentence: &mut ConllSentence,
                              tag_lines: &mut Vec<usize>,
                              current: &mut ConllRecord,
                              have_current: &mut bool|
     -> Result<(), ConllError> {
        if sentence.tokens.is_empty() {
            return Ok(());
        }
        if repair == Repair::Strict {
            if let Some(i) = first_invalid_tag(&sentence.tags) {
                return Err(ConllError::InvalidTag {
                    line: tag_lines[i],
                    tag: sentence.tags[i].to_string(),
                });
            }
        }
        current.sentences.push(std::mem::take(sentence));
        tag_lines.clear();
        *have_current = true;
        Ok(())
    };

    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = std::str::from_utf8(&buf).map_err(|e| ConllError::Format {
            line: line_no,
            detail: format!("invalid UTF-8: {e}"),
        })?;
        let line = line.trim_end_matches(['\n', '\r']);
        let mut cols = line.split([' ', '\t']).filter(|c| !c.is_empty());
        let Some(first) = cols.next() else {
            flush_sentence(&mut sentence, &mut tag_lines, &mut current, &mut have_current)?;
            continue;
        };
        if first == DOCSTART {
            flush_sentence(&mut sentence, &mut tag_lines, &mut current, &mut have_current)?;
            if have_current {
                records.push(std::mem::take(&mut current));
            }
            let id = cols.next().filter(|c| *c != "-X-").map(str::to_string);
            current = ConllRecord {
                doc_id: id,
                sentences: Vec::new(),
            };
            have_current = true;
            continue;
        }
        let Some(last) = cols.last() else {
            return Err(ConllError::Format {
                line: line_no,
                detail: "expected at least 2 columns".into(),
            });
        };
        let tag = decode_tag(last).map_err(|e| ConllError::Format {
            line: line_no,
            detail: format!("{e}"),
        })?;
        sentence.tokens.push(first.to_string());
        sentence.tags.push(tag);
        tag_lines.push(line_no);
    }
    flush_sentence(&mut sentence, &mut tag_lines, &mut current, &mut have_current)?;
    if have_current {
        records.push(current);
    }
    Ok(records)
}

/// Tags are whitespace-delimited in CoNLL, so a space inside a label is
/// written as `_` ("B-MEDICAL_RECORD") and read back as a space. A label
/// holding a literal `_` would be ambiguous and is refused by the writer.
fn encode_tag(tag: &Tag) -> Result<String, String> {
    match tag.label() {
        Some(l) if l.contains('_') => Err(format!("label {l:?} contains '_', which CoNLL reserves for spaces")),
        _ => Ok(tag.to_string().replace(' ', "_")),
    }
}

fn decode_tag(field: &str) -> Result<Tag, crate::annotation::TagParseError> {
    field.replace('_', " ").parse()
}

/// Serializes records in the canonical dialect.
pub fn write_conll<W: Write>(records: &[ConllRecord], mut out: W) -> Result<(), ConllError> {
    for (ri, record) in records.iter().enumerate() {
        if record.doc_id.is_some() || ri > 0 || record.sentences.is_empty() {
            match &record.doc_id {
                Some(id) => {
                    if id.is_empty() || id.chars().any(char::is_whitespace) {
                        return Err(ConllError::Write {
                            record: ri,
                            sentence: 0,
                            detail: format!("doc_id {id:?} must be a single non-empty word"),
                        });
                    }
                    writeln!(out, "{DOCSTART} {id}")?
                }
                None => writeln!(out, "{DOCSTART}")?,
            }
            writeln!(out)?;
        }
        for (si, s) in record.sentences.iter().enumerate() {
            let bad = |detail: String| ConllError::Write {
                record: ri,
                sentence: si,
                detail,
            };
            if s.tokens.is_empty() {
                return Err(bad("empty sentence".into()));
            }
            if s.tokens.len() != s.tags.len() {
                return Err(bad(format!("{} tokens but {} tags", s.tokens.len(), s.tags.len())));
            }
            for (tok, tag) in s.tokens.iter().zip(&s.tags) {
                if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                    return Err(bad(format!("token {tok:?} is empty or contains whitespace")));
                }
                if tok == DOCSTART {
                    return Err(bad(format!("token {DOCSTART} is reserved")));
                }
                writeln!(out, "{tok} {}", encode_tag(tag).map_err(bad)?)?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

pub fn write_conll_string(records: &[ConllRecord]) -> Result<String, ConllError> {
    let mut buf = Vec::new();
    write_conll(records, &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits UTF-8"))
}

impl ConllSentence {
    /// Rebuilds sentence text by joining tokens with single spaces, returning
    /// the text and token offsets into it.
    pub fn to_sentence(&self, base: usize) -> (String, Sentence) {
        let mut text = String::new();
        let mut tokens = Vec::with_capacity(self.tokens.len());
        let mut pos = base;
        for (i, tok) in self.tokens.iter().enumerate() {
            if i > 0 {
                text.push(' ');
                pos += 1;
            }
            let len = tok.chars().count();
            text.push_str(tok);
            tokens.push(Token {
                text: tok.clone(),
                start: pos,
                end: pos + len,
            });
            pos += len;
        }
        (text, Sentence::from_tokens(tokens))
    }

    pub fn spans(
        &self,
        repair: Repair,
        labels: Option<&LabelSet>,
        source: Source,
    ) -> Result<(String, Vec<EntitySpan>), AnnotationError> {
        let (text, sentence) = self.to_sentence(0);
        let spans = bio_to_spans(&sentence, &self.tags, repair, labels, source)?;
        Ok((text, spans))
    }
}

/// Span-level interchange: `{doc_id, text, spans: [{label,start,end,source,confidence}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub spans: Vec<EntitySpan>,
}

impl AnnotatedDocument {
    pub fn document(&self, language_code: &str) -> Document {
        Document::new(self.doc_id.clone(), self.text.clone(), language_code)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<AnnotatedDocument>),
    One(AnnotatedDocument),
}

/// Reads a single annotated document or an array of them.
pub fn read_annotations<R: Read>(input: R) -> Result<Vec<AnnotatedDocument>, serde_json::Error> {
    Ok(match serde_json::from_reader(input)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(d) => vec![d],
    })
}

pub fn write_annotations<W: Write>(docs: &[AnnotatedDocument], out: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, docs)
}

/// Projects a CoNLL record onto span-JSON. Sentences are joined with `\n`
/// and tokens with single spaces.
pub fn record_to_annotated(
    record: &ConllRecord,
    fallback_id: &str,
    repair: Repair,
    labels: Option<&LabelSet>,
    source: Source,
) -> Result<AnnotatedDocument, AnnotationError> {
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut base = 0usize;
    for (i, s) in record.sentences.iter().enumerate() {
        if i > 0 {
            text.push('\n');
            base += 1;
        }
        let (stext, sentence) = s.to_sentence(base);
        spans.extend(bio_to_spans(&sentence, &s.tags, repair, labels, source)?);
        base += stext.chars().count();
        text.push_str(&stext);
    }
    Ok(AnnotatedDocument {
        doc_id: record.doc_id.clone().unwrap_or_else(|| fallback_id.to_string()),
        text,
        spans,
    })
}

/// Projects span annotations onto CoNLL using the given sentences.
pub fn annotated_to_record(
    doc_id: Option<String>,
    sentences: &[Sentence],
    spans: &[EntitySpan],
) -> Result<ConllRecord, AnnotationError> {
    let mut out = ConllRecord {
        doc_id,
        sentences: Vec::with_capacity(sentences.len()),
    };
    for s in sentences {
        let inside: Vec<EntitySpan> = spans
            .iter()
            .filter(|sp| sp.start >= s.start && sp.end <= s.end)
            .cloned()
            .collect();
        let tags = spans_to_bio(s, &inside)?;
        out.sentences.push(ConllSentence {
            tokens: s.tokens.iter().map(|t| t.text.clone()).collect(),
            tags,
        });
    }
    Ok(out)
}
