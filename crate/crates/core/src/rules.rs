//! Regex-based detection for the rule-tier labels.
//!
//! A rule set is compiled once at load time; detection is a pure function of
//! the document text. Overlapping candidates are resolved by length, then
//! rule priority, then earliest start.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{Document, EntitySpan, Source};
use crate::labels::LabelSet;
use crate::tokenizer::word_punct_tokenize;

const DEFAULT_RULES: &str = include_str!("data/rules_default.toml");

/// Maximum number of tokens allowed between a context trigger and the match.
const CONTEXT_TOKENS: usize = 3;
/// Look-back window, in characters, searched for a context trigger.
const CONTEXT_WINDOW: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validator {
    /// US SSN structure: area not 000, 666 or 9xx; group not 00; serial not 0000.
    Ssn,
    Ipv4,
    Ipv6,
    /// At least one letter and one digit.
    Vin,
    /// ISO 3779 check digit in position 9.
    VinChecksum,
    HasDigit,
}

impl Validator {
    pub fn check(self, text: &str) -> bool {
        match self {
            Validator::Ssn => valid_ssn(text),
            Validator::Ipv4 => text.parse::<Ipv4Addr>().is_ok(),
            Validator::Ipv6 => text.parse::<Ipv6Addr>().is_ok(),
            Validator::Vin => {
                text.chars().any(|c| c.is_ascii_digit())
                    && text.chars().any(|c| c.is_ascii_alphabetic())
            }
            Validator::VinChecksum => vin_check_digit(text).is_some_and(|d| {
                text.as_bytes().get(8).map(|&b| b as char) == Some(d)
            }),
            Validator::HasDigit => text.chars().any(|c| c.is_ascii_digit()),
        }
    }
}

pub fn valid_ssn(text: &str) -> bool {
    let digits: Vec<u32> = text.chars().filter_map(|c| c.to_digit(10)).collect();
    if digits.len() != 9 || text.chars().any(|c| !c.is_ascii_digit() && c != '-') {
        return false;
    }
    let area = digits[0] * 100 + digits[1] * 10 + digits[2];
    let group = digits[3] * 10 + digits[4];
    let serial = digits[5..].iter().fold(0, |acc, d| acc * 10 + d);
    area != 0 && area != 666 && area < 900 && group != 0 && serial != 0
}

/// Computes the ISO 3779 (North American) check digit of a 17-char VIN.
pub fn vin_check_digit(vin: &str) -> Option<char> {
    const WEIGHTS: [u32; 17] = [8, 7, 6, 5, 4, 3, 2, 10, 0, 9, 8, 7, 6, 5, 4, 3, 2];
    if vin.len() != 17 {
        return None;
    }
    let mut sum = 0u32;
    for (b, w) in vin.bytes().zip(WEIGHTS) {
        let v = match b {
            b'0'..=b'9' => (b - b'0') as u32,
            b'A' | b'J' => 1,
            b'B' | b'K' | b'S' => 2,
            b'C' | b'L' | b'T' => 3,
            b'D' | b'M' | b'U' => 4,
            b'E' | b'N' | b'V' => 5,
            b'F' | b'W' => 6,
            b'G' | b'P' | b'X' => 7,
            b'H' | b'Y' => 8,
            b'R' | b'Z' => 9,
            _ => return None,
        };
        sum += v * w;
    }
    Some(match sum % 11 {
        10 => 'X',
        d => char::from_digit(d, 10).unwrap(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulePattern {
    pub label: String,
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator: Option<Validator>,
    #[serde(default)]
    pub priority: i32,
}

#[derive(Debug, Deserialize)]
struct RuleFile {
    #[serde(default)]
    rule: Vec<RulePattern>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule {index} ({label}): pattern does not compile: {detail}")]
    PatternCompile {
        index: usize,
        label: String,
        detail: String,
    },
    #[error("rule {index} ({label}): context does not compile: {detail}")]
    ContextCompile {
        index: usize,
        label: String,
        detail: String,
    },
    #[error("rule {index}: label {label:?} is not a rule-tier label")]
    NotRuleLabel { index: usize, label: String },
    #[error("rule file: {0}")]
    File(String),
}

/// Every problem found while loading a rule set.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("{} rule error(s): {}", .0.len(), .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct RuleLoadError(pub Vec<RuleError>);

#[derive(Debug, Clone)]
struct CompiledRule {
    spec: RulePattern,
    regex: Regex,
    anchored: Regex,
    context: Option<Regex>,
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<CompiledRule>,
}

impl RuleSet {
    /// Compiles and validates rules against the label set's rule tier,
    /// reporting every error at once.
    pub fn compile(patterns: Vec<RulePattern>, labels: &LabelSet) -> Result<Self, RuleLoadError> {
        let mut errors = Vec::new();
        let mut rules = Vec::new();
        for (index, spec) in patterns.into_iter().enumerate() {
            if !labels.is_rule_label(&spec.label) {
                errors.push(RuleError::NotRuleLabel {
                    index,
                    label: spec.label.clone(),
                });
            }
            let regex = Regex::new(&spec.pattern);
            let anchored = Regex::new(&format!("^(?:{})$", spec.pattern));
            let context = spec
                .context
                .as_deref()
                .map(|c| RegexBuilder::new(c).case_insensitive(true).build())
                .transpose();
            match (regex, anchored, context) {
                (Ok(regex), Ok(anchored), Ok(context)) => rules.push(CompiledRule {
                    spec,
                    regex,
                    anchored,
                    context,
                }),
                (Err(e), _, _) | (_, Err(e), _) => errors.push(RuleError::PatternCompile {
                    index,
                    label: spec.label.clone(),
                    detail: e.to_string(),
                }),
                (_, _, Err(e)) => errors.push(RuleError::ContextCompile {
                    index,
                    label: spec.label.clone(),
                    detail: e.to_string(),
                }),
            }
        }
        if errors.is_empty() {
            Ok(Self { rules })
        } else {
            Err(RuleLoadError(errors))
        }
    }

    pub fn parse_file(src: &str) -> Result<Vec<RulePattern>, RuleLoadError> {
        toml::from_str::<RuleFile>(src)
            .map(|f| f.rule)
            .map_err(|e| RuleLoadError(vec![RuleError::File(e.to_string())]))
    }

    pub fn from_toml_str(src: &str, labels: &LabelSet) -> Result<Self, RuleLoadError> {
        Self::compile(Self::parse_file(src)?, labels)
    }

    /// Loads several rule files; errors from all of them are reported together.
    pub fn from_paths(paths: &[impl AsRef<Path>], labels: &LabelSet) -> Result<Self, RuleLoadError> {
        let mut all = Vec::new();
        let mut errors = Vec::new();
        for p in paths {
            let p = p.as_ref();
            match std::fs::read_to_string(p) {
                Ok(src) => match Self::parse_file(&src) {
                    Ok(rules) => all.extend(rules),
                    Err(RuleLoadError(e)) => errors.extend(e.into_iter().map(|e| {
                        RuleError::File(format!("{}: {e}", p.display()))
                    })),
                },
                Err(e) => errors.push(RuleError::File(format!("{}: {e}", p.display()))),
            }
        }
        if !errors.is_empty() {
            return Err(RuleLoadError(errors));
        }
        Self::compile(all, labels)
    }

    /// The shipped patterns, restricted to the label set's rule tier.
    pub fn default_patterns(labels: &LabelSet) -> Vec<RulePattern> {
        Self::parse_file(DEFAULT_RULES)
            .expect("embedded rule file parses")
            .into_iter()
            .filter(|r| labels.is_rule_label(&r.label))
            .collect()
    }

    pub fn defaults(labels: &LabelSet) -> Self {
        Self::compile(Self::default_patterns(labels), labels).expect("embedded rules compile")
    }

    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn patterns(&self) -> impl Iterator<Item = &RulePattern> {
        self.rules.iter().map(|r| &r.spec)
    }

    /// True when `text` as a whole matches the pattern of some rule for `label`.
    pub fn full_match(&self, label: &str, text: &str) -> bool {
        self.rules
            .iter()
            .any(|r| r.spec.label == label && r.anchored.is_match(text))
    }

    pub fn detect(&self, doc: &Document) -> Vec<EntitySpan> {
        detect_rules(doc, self)
    }
}

struct Candidate {
    start: usize,
    end: usize,
    priority: i32,
    rule: usize,
}

/// Byte offset where the paragraph containing `pos` begins.
fn paragraph_start(text: &str, pos: usize) -> usize {
    static BLANK: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    let blank = BLANK.get_or_init(|| Regex::new(r"\n[^\S\n]*\n").unwrap());
    blank.find_iter(&text[..pos]).last().map_or(0, |m| m.end())
}

fn context_satisfied(text: &str, match_start: usize, ctx: &Regex) -> bool {
    let para = paragraph_start(text, match_start);
    let mut window_start = match_start;
    for (n, (b, _)) in text[para..match_start].char_indices().rev().enumerate() {
        window_start = para + b;
        if n + 1 >= CONTEXT_WINDOW {
            break;
        }
    }
    let window = &text[window_start..match_start];
    ctx.find_iter(window)
        .filter(|m| word_punct_tokenize(&window[m.end()..]).len() <= CONTEXT_TOKENS)
        .last()
        .is_some()
}

/// Runs every rule over the document and returns non-overlapping spans
/// sorted by start, with `source = RULE` and confidence 1.
pub fn detect_rules(doc: &Document, rules: &RuleSet) -> Vec<EntitySpan> {
    let text = doc.text();
    let mut candidates = Vec::new();
    for (ri, rule) in rules.rules.iter().enumerate() {
        for m in rule.regex.find_iter(text) {
            if m.as_str().is_empty() {
                continue;
            }
            if let Some(v) = rule.spec.validator {
                if !v.check(m.as_str()) {
                    continue;
                }
            }
            if let Some(ctx) = &rule.context {
                if !context_satisfied(text, m.start(), ctx) {
                    continue;
                }
            }
            let start = doc.index().char_of_byte(m.start());
            let end = doc.index().char_of_byte(m.end());
            candidates.push(Candidate {
                start,
                end,
                priority: rule.spec.priority,
                rule: ri,
            });
        }
    }
    candidates.sort_by(|a, b| {
        (b.end - b.start)
            .cmp(&(a.end - a.start))
            .then(b.priority.cmp(&a.priority))
            .then(a.start.cmp(&b.start))
            .then(a.rule.cmp(&b.rule))
    });
    let mut accepted: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for c in candidates {
        let clash = accepted
            .range(..c.end)
            .next_back()
            .is_some_and(|(_, &(end, _))| end > c.start);
        if !clash {
            accepted.insert(c.start, (c.end, c.rule));
        }
    }
    accepted
        .into_iter()
        .map(|(start, (end, rule))| {
            EntitySpan::new(rules.rules[rule].spec.label.clone(), start, end, Source::Rule)
        })
        .collect()
}
