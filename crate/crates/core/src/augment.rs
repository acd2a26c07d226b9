//! Synthetic augmentation: placeholder substitution, translation and
//! re-injection of fake chunks, emitted back as BIO.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::Deserialize;
use thiserror::Error;

use crate::annotation::{bio_to_spans, spans_to_bio, AnnotationError, EntitySpan, Repair, Source};
use crate::conll::{ConllRecord, ConllSentence};
use crate::labels::LabelSet;
use crate::tokenizer::word_punct_tokenize;

const DEFAULT_TABLE: &str = include_str!("data/fake_chunks_default.toml");

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("spans overlap: {0} and {1}")]
    Overlap(String, String),
    #[error("placeholders not preserved: missing {missing:?}, duplicated {duplicated:?}, unexpected {unexpected:?}")]
    PlaceholderLost {
        missing: Vec<String>,
        duplicated: Vec<String>,
        unexpected: Vec<String>,
    },
    #[error("no fake-chunk template for label {0}")]
    MissingLabel(String),
    #[error("translator {name}: {detail}")]
    Plugin { name: String, detail: String },
    #[error("fake-chunk table: {0}")]
    Table(String),
    #[error("sentence {index}: {source}")]
    Alignment {
        index: usize,
        #[source]
        source: AnnotationError,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Template {
    Literal { literal: String },
    Pattern { pattern: String },
    Date {
        date_format: String,
        #[serde(default = "default_min_year")]
        min_year: i32,
        #[serde(default = "default_max_year")]
        max_year: i32,
    },
    Pool { pool: String },
    /// Reuses the chunk being replaced.
    Original { original: bool },
}

fn default_min_year() -> i32 {
    1950
}

fn default_max_year() -> i32 {
    2030
}

#[derive(Debug, Clone, Deserialize)]
pub struct FakeChunkTable {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pools: BTreeMap<String, Vec<String>>,
    pub labels: BTreeMap<String, Vec<Template>>,
}

enum Atom {
    Digit,
    Upper,
    Lower,
    Lit(char),
    Pool(String),
}

fn parse_pattern(p: &str) -> Result<Vec<Atom>, String> {
    let mut out = Vec::new();
    let mut it = p.chars().peekable();
    while let Some(c) = it.next() {
        match c {
            '\\' => match it.next() {
                Some('d') => out.push(Atom::Digit),
                Some('L') => out.push(Atom::Upper),
                Some('l') => out.push(Atom::Lower),
                Some(e @ ('\\' | '{' | '}')) => out.push(Atom::Lit(e)),
                other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
            },
            '{' => {
                let mut body = String::new();
                loop {
                    match it.next() {
                        Some('}') => break,
                        Some(ch) => body.push(ch),
                        None => return Err("unclosed '{'".into()),
                    }
                }
                if let Some(name) = body.strip_prefix("pool:") {
                    out.push(Atom::Pool(name.to_string()));
                } else {
                    let n: usize = body.parse().map_err(|_| format!("bad repeat {{{body}}}"))?;
                    let last = out.pop().ok_or("repeat with nothing to repeat")?;
                    for _ in 0..n {
                        out.push(match &last {
                            Atom::Digit => Atom::Digit,
                            Atom::Upper => Atom::Upper,
                            Atom::Lower => Atom::Lower,
                            Atom::Lit(c) => Atom::Lit(*c),
                            Atom::Pool(p) => Atom::Pool(p.clone()),
                        });
                    }
                }
            }
            c => out.push(Atom::Lit(c)),
        }
    }
    Ok(out)
}

impl FakeChunkTable {
    pub fn from_toml_str(src: &str) -> Result<Self, AugmentError> {
        let t: FakeChunkTable = toml::from_str(src).map_err(|e| AugmentError::Table(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn from_path(path: &Path) -> Result<Self, AugmentError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| AugmentError::Table(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// Surrogate table covering every shipped label.
    pub fn default_table() -> Self {
        Self::from_toml_str(DEFAULT_TABLE).expect("embedded table is valid")
    }

    /// A table whose only template for each label is the replaced chunk.
    pub fn originals_only<S: AsRef<str>>(labels: &[S]) -> Self {
        FakeChunkTable {
            seed: 0,
            pools: BTreeMap::new(),
            labels: labels
                .iter()
                .map(|l| (l.as_ref().to_string(), vec![Template::Original { original: true }]))
                .collect(),
        }
    }

    pub fn covers(&self, label: &str) -> bool {
        self.labels.get(label).is_some_and(|t| !t.is_empty())
    }

    fn validate(&self) -> Result<(), AugmentError> {
        let bad = |what: String| Err(AugmentError::Table(what));
        for (name, pool) in &self.pools {
            if pool.is_empty() {
                return bad(format!("pool {name} is empty"));
            }
            if let Some(v) = pool.iter().find(|v| v.trim().is_empty() || v.contains("__")) {
                return bad(format!("pool {name}: unusable entry {v:?}"));
            }
        }
        for (label, templates) in &self.labels {
            if templates.is_empty() {
                return bad(format!("{label}: no templates"));
            }
            for t in templates {
                match t {
                    Template::Literal { literal } if literal.trim().is_empty() || literal.contains("__") => {
                        return bad(format!("{label}: unusable literal {literal:?}"));
                    }
                    Template::Pattern { pattern } => {
                        let atoms = parse_pattern(pattern).map_err(|e| AugmentError::Table(format!("{label}: {e}")))?;
                        if atoms.is_empty() || pattern.contains("__") {
                            return bad(format!("{label}: unusable pattern {pattern:?}"));
                        }
                        for a in &atoms {
                            if let Atom::Pool(p) = a {
                                if !self.pools.contains_key(p) {
                                    return bad(format!("{label}: unknown pool {p}"));
                                }
                            }
                        }
                    }
                    Template::Pool { pool } if !self.pools.contains_key(pool) => {
                        return bad(format!("{label}: unknown pool {pool}"));
                    }
                    Template::Date { date_format, min_year, max_year } => {
                        if min_year > max_year {
                            return bad(format!("{label}: min_year > max_year"));
                        }
                        let probe = NaiveDate::from_ymd_opt(2001, 2, 3).expect("valid date");
                        let mut s = String::new();
                        use std::fmt::Write as _;
                        if write!(s, "{}", probe.format(date_format)).is_err() || s.trim().is_empty() {
                            return bad(format!("{label}: bad date format {date_format:?}"));
                        }
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Draws one surface form for `label`. `original` backs `original` templates.
    pub fn generate<R: Rng>(&self, label: &str, original: &str, rng: &mut R) -> Result<String, AugmentError> {
        let templates = self
            .labels
            .get(label)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| AugmentError::MissingLabel(label.to_string()))?;
        let t = templates.choose(rng).expect("non-empty");
        Ok(match t {
            Template::Literal { literal } => literal.clone(),
            Template::Original { .. } => original.to_string(),
            Template::Pool { pool } => self.pools[pool].choose(rng).expect("non-empty").clone(),
            Template::Pattern { pattern } => {
                let mut s = String::new();
                for a in parse_pattern(pattern).map_err(AugmentError::Table)? {
                    match a {
                        Atom::Digit => s.push(char::from(b'0' + rng.gen_range(0..10u8))),
                        Atom::Upper => s.push(char::from(b'A' + rng.gen_range(0..26u8))),
                        Atom::Lower => s.push(char::from(b'a' + rng.gen_range(0..26u8))),
                        Atom::Lit(c) => s.push(c),
                        Atom::Pool(p) => s.push_str(self.pools[&p].choose(rng).expect("non-empty")),
                    }
                }
                s
            }
            Template::Date { date_format, min_year, max_year } => {
                let lo = NaiveDate::from_ymd_opt(*min_year, 1, 1).expect("valid year");
                let hi = NaiveDate::from_ymd_opt(*max_year, 12, 31).expect("valid year");
                let days = (hi - lo).num_days();
                let d = lo + chrono::Duration::days(rng.gen_range(0..=days));
                d.format(date_format).to_string()
            }
        })
    }
}

/// Labels augmented by default: a narrow English set, everything elsewhere.
pub fn preset_targets(labels: &LabelSet) -> BTreeSet<String> {
    if labels.language_code() == "en" {
        ["ORGANIZATION", "PROFESSION", "LOCATION-OTHER"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        labels.all_labels().map(str::to_string).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub spans: Vec<EntitySpan>,
}

/// Sentences containing at least one span with a target label. Sentence
/// text is the tokens joined by single spaces.
pub fn extract_candidates(records: &[ConllRecord], targets: &BTreeSet<String>) -> Vec<Candidate> {
    if targets.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    for s in records.iter().flat_map(|r| &r.sentences) {
        let (text, sentence) = s.to_sentence(0);
        let spans = bio_to_spans(&sentence, &s.tags, Repair::Relaxed, None, Source::Gold)
            .expect("relaxed decoding without a label set is total");
        if spans.iter().any(|sp| targets.contains(&sp.label)) {
            out.push(Candidate { text, spans });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub id: String,
    pub label: String,
    pub original: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceholderDoc {
    pub text: String,
    /// In textual order.
    pub slots: Vec<Slot>,
}

pub fn placeholder_id(label: &str, k: usize) -> String {
    format!("__{}_{k}__", label.replace(' ', "_"))
}

/// Replaces every span with `__<LABEL>_<k>__`, `k` counting per label.
pub fn to_placeholders(text: &str, spans: &[EntitySpan]) -> Result<PlaceholderDoc, AugmentError> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            let fmt = |s: &EntitySpan| format!("{} [{}, {})", s.label, s.start, s.end);
            return Err(AugmentError::Overlap(fmt(w[0]), fmt(w[1])));
        }
    }
    let chars: Vec<char> = text.chars().collect();
    let mut ordinal: HashMap<&str, usize> = HashMap::new();
    let mut out = String::with_capacity(text.len());
    let mut slots = Vec::with_capacity(sorted.len());
    let mut pos = 0;
    for s in sorted {
        out.extend(&chars[pos..s.start]);
        let k = ordinal.entry(&s.label).or_insert(0);
        *k += 1;
        let id = placeholder_id(&s.label, *k);
        out.push_str(&id);
        slots.push(Slot {
            id,
            label: s.label.clone(),
            original: chars[s.start..s.end].iter().collect(),
        });
        pos = s.end;
    }
    out.extend(&chars[pos..]);
    Ok(PlaceholderDoc { text: out, slots })
}

pub trait TranslatorPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, text: &str) -> Result<String, AugmentError>;
    fn translate_batch(&self, texts: &[String]) -> Result<Vec<String>, AugmentError> {
        texts.par_iter().map(|t| self.translate(t)).collect()
    }
}

pub struct IdentityTranslator;

impl TranslatorPlugin for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str) -> Result<String, AugmentError> {
        Ok(text.to_string())
    }
}

/// Whole-word substitution from a fixed dictionary; stands in for a real
/// translator in tests.
pub struct DictionaryTranslator {
    words: HashMap<String, String>,
    re: Regex,
}

impl DictionaryTranslator {
    pub fn new<I, K, V>(entries: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let words: HashMap<String, String> = entries.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let re = Regex::new(r"[\p{Alphabetic}\p{Nd}_]+").expect("static regex");
        DictionaryTranslator { words, re }
    }
}

impl TranslatorPlugin for DictionaryTranslator {
    fn name(&self) -> &str {
        "dictionary"
    }

    fn translate(&self, text: &str) -> Result<String, AugmentError> {
        Ok(self
            .re
            .replace_all(text, |c: &regex::Captures| {
                let w = &c[0];
                self.words.get(w).cloned().unwrap_or_else(|| w.to_string())
            })
            .into_owned())
    }
}

/// External program. Single mode runs it once per text (stdin in, stdout
/// out); batch mode sends one JSON string per line and expects one back.
pub struct ExternalTranslator {
    pub program: String,
    pub args: Vec<String>,
    pub ndjson: bool,
}

impl ExternalTranslator {
    fn err(&self, detail: impl Into<String>) -> AugmentError {
        AugmentError::Plugin {
            name: self.program.clone(),
            detail: detail.into(),
        }
    }

    fn run(&self, input: &str) -> Result<String, AugmentError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| self.err(e.to_string()))?;
        let mut stdin = child.stdin.take().expect("piped");
        let payload = input.to_string();
        let writer = std::thread::spawn(move || stdin.write_all(payload.as_bytes()));
        let out = child.wait_with_output().map_err(|e| self.err(e.to_string()))?;
        writer
            .join()
            .map_err(|_| self.err("stdin writer panicked"))?
            .map_err(|e| self.err(e.to_string()))?;
        if !out.status.success() {
            return Err(self.err(format!("exited with {}", out.status)));
        }
        String::from_utf8(out.stdout).map_err(|_| self.err("output is not UTF-8"))
    }
}

impl TranslatorPlugin for ExternalTranslator {
    fn name(&self) -> &str {
        &self.program
    }

    fn translate(&self, text: &str) -> Result<String, AugmentError> {
        let out = self.run(text)?;
        Ok(out.strip_suffix('\n').unwrap_or(&out).to_string())
    }

    fn translate_batch(&self, texts: &[String]) -> Result<Vec<String>, AugmentError> {
        if !self.ndjson {
            return texts.par_iter().map(|t| self.translate(t)).collect();
        }
        let mut input = String::new();
        for t in texts {
            input.push_str(&serde_json::to_string(t).expect("string serializes"));
            input.push('\n');
        }
        let out = self.run(&input)?;
        let mut res = Vec::with_capacity(texts.len());
        for line in BufReader::new(out.as_bytes()).lines() {
            let line = line.map_err(|e| self.err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            res.push(serde_json::from_str::<String>(&line).map_err(|e| self.err(e.to_string()))?);
        }
        if res.len() != texts.len() {
            return Err(self.err(format!("sent {} texts, got {}", texts.len(), res.len())));
        }
        Ok(res)
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"__[A-Z][A-Z_-]*?_\d+__").expect("static regex"))
}

/// Checks that every placeholder survived exactly once and reorders slots to
/// the order they appear in `translated`.
pub fn verify_translation(doc: &PlaceholderDoc, translated: String) -> Result<PlaceholderDoc, AugmentError> {
    let mut missing = Vec::new();
    let mut duplicated = Vec::new();
    let mut positions = Vec::with_capacity(doc.slots.len());
    for slot in &doc.slots {
        let hits: Vec<usize> = translated.match_indices(&slot.id).map(|(i, _)| i).collect();
        match hits.len() {
            0 => missing.push(slot.id.clone()),
            1 => positions.push((hits[0], slot.clone())),
            _ => duplicated.push(slot.id.clone()),
        }
    }
    let known: BTreeSet<&str> = doc.slots.iter().map(|s| s.id.as_str()).collect();
    let unexpected: Vec<String> = placeholder_re()
        .find_iter(&translated)
        .map(|m| m.as_str())
        .filter(|m| !known.contains(m))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() || !duplicated.is_empty() || !unexpected.is_empty() {
        return Err(AugmentError::PlaceholderLost {
            missing,
            duplicated,
            unexpected,
        });
    }
    positions.sort_by_key(|(p, _)| *p);
    Ok(PlaceholderDoc {
        text: translated,
        slots: positions.into_iter().map(|(_, s)| s).collect(),
    })
}

pub fn translate(doc: &PlaceholderDoc, translator: &dyn TranslatorPlugin) -> Result<PlaceholderDoc, AugmentError> {
    verify_translation(doc, translator.translate(&doc.text)?)
}

/// Replaces each placeholder with a generated chunk of its label and returns
/// the text with exact spans of the injected chunks.
pub fn refill(doc: &PlaceholderDoc, table: &FakeChunkTable, seed: u64) -> Result<(String, Vec<EntitySpan>), AugmentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(doc.text.len());
    let mut spans = Vec::with_capacity(doc.slots.len());
    let mut rest = doc.text.as_str();
    let mut pos = 0usize;
    for slot in &doc.slots {
        let at = rest
            .find(&slot.id)
            .ok_or_else(|| AugmentError::PlaceholderLost {
                missing: vec![slot.id.clone()],
                duplicated: vec![],
                unexpected: vec![],
            })?;
        let before = &rest[..at];
        out.push_str(before);
        pos += before.chars().count();
        let chunk = table.generate(&slot.label, &slot.original, &mut rng)?;
        let len = chunk.chars().count();
        out.push_str(&chunk);
        spans.push(EntitySpan::new(slot.label.clone(), pos, pos + len, Source::Synth));
        pos += len;
        rest = &rest[at + slot.id.len()..];
    }
    out.push_str(rest);
    Ok((out, spans))
}

/// Tokenizes each sentence and tags it. Returns one record holding all
/// sentences, or none for empty input.
pub fn emit_bio(pairs: &[(String, Vec<EntitySpan>)]) -> Result<Vec<ConllRecord>, AugmentError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let sentences = pairs
        .iter()
        .enumerate()
        .map(|(index, (text, spans))| {
            let tokens = word_punct_tokenize(text);
            let sentence = crate::annotation::Sentence::from_tokens(tokens);
            let tags = spans_to_bio(&sentence, spans).map_err(|source| AugmentError::Alignment { index, source })?;
            Ok(ConllSentence {
                tokens: sentence.tokens.into_iter().map(|t| t.text).collect(),
                tags,
            })
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(vec![ConllRecord {
        doc_id: None,
        sentences,
    }])
}

/// Per-item seed derived from the run seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The whole loop: extract, substitute, translate, refill, tag.
pub fn augment_corpus(
    records: &[ConllRecord],
    targets: &BTreeSet<String>,
    translator: &dyn TranslatorPlugin,
    table: &FakeChunkTable,
    seed: u64,
) -> Result<Vec<ConllRecord>, AugmentError> {
    let candidates = extract_candidates(records, targets);
    let docs = candidates
        .par_iter()
        .map(|c| to_placeholders(&c.text, &c.spans))
        .collect::<Result<Vec<_>, _>>()?;
    let texts: Vec<String> = docs.iter().map(|d| d.text.clone()).collect();
    let translated = translator.translate_batch(&texts)?;
    if translated.len() != docs.len() {
        return Err(AugmentError::Plugin {
            name: translator.name().to_string(),
            detail: format!("sent {} texts, got {}", docs.len(), translated.len()),
        });
    }
    let pairs = docs
        .par_iter()
        .zip(translated)
        .enumerate()
        .map(|(i, (d, t))| {
            let d = verify_translation(d, t)?;
            refill(&d, table, derive_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>, _>>()?;
    emit_bio(&pairs)
}
