//! Offset-preserving word/punctuation tokenization and sentence splitting.

use std::io::Write;
use std::process::{Command, Stdio};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use thiserror::Error;

use crate::annotation::{Sentence, Token};

fn word_punct_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    // Word characters: Unicode Alphabetic, decimal digits (Nd) and underscore.
    RE.get_or_init(|| {
        Regex::new(r"[\p{Alphabetic}\p{Nd}_]+|[^\p{Alphabetic}\p{Nd}_\s]+").unwrap()
    })
}

/// Splits text into maximal runs of word characters or of non-space
/// punctuation. Offsets are code points into `text`.
pub fn word_punct_tokenize(text: &str) -> Vec<Token> {
    tokenize_from(text, 0)
}

/// Tokenizes `text` and shifts every offset by `base` code points.
pub fn tokenize_from(text: &str, base: usize) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chars_seen = 0usize;
    let mut byte_seen = 0usize;
    for m in word_punct_regex().find_iter(text) {
        chars_seen += text[byte_seen..m.start()].chars().count();
        let len = m.as_str().chars().count();
        tokens.push(Token {
            text: m.as_str().to_string(),
            start: base + chars_seen,
            end: base + chars_seen + len,
        });
        chars_seen += len;
        byte_seen = m.end();
    }
    tokens
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PluginError {
    #[error("splitter {plugin}: range {index} ({start}, {end}) is empty or out of bounds")]
    BadRange {
        plugin: String,
        index: usize,
        start: usize,
        end: usize,
    },
    #[error("splitter {plugin}: range {index} overlaps or precedes the previous range")]
    Unordered { plugin: String, index: usize },
    #[error("splitter {plugin}: text at offset {offset} is not covered by any sentence")]
    Uncovered { plugin: String, offset: usize },
    #[error("plugin {plugin} failed: {detail}")]
    Failed { plugin: String, detail: String },
}

/// Sentence boundary detector. Ranges are code-point offsets into the text.
pub trait SentenceSplitter: Send + Sync {
    fn name(&self) -> &str;
    fn split(&self, text: &str) -> Result<Vec<(usize, usize)>, PluginError>;
    /// Whether `split` may be called from several threads at once.
    fn concurrent_safe(&self) -> bool {
        true
    }
}

/// Splits `text` with `plugin`, validates its ranges and tokenizes each one.
pub fn split_sentences(
    text: &str,
    plugin: &dyn SentenceSplitter,
) -> Result<Vec<Sentence>, PluginError> {
    let ranges = plugin.split(text)?;
    let chars: Vec<char> = text.chars().collect();
    let mut prev_end = 0usize;
    for (i, &(start, end)) in ranges.iter().enumerate() {
        if start >= end || end > chars.len() {
            return Err(PluginError::BadRange {
                plugin: plugin.name().to_string(),
                index: i,
                start,
                end,
            });
        }
        if i > 0 && start < prev_end {
            return Err(PluginError::Unordered {
                plugin: plugin.name().to_string(),
                index: i,
            });
        }
        if let Some(off) = (prev_end..start).find(|&k| !chars[k].is_whitespace()) {
            return Err(PluginError::Uncovered {
                plugin: plugin.name().to_string(),
                offset: off,
            });
        }
        prev_end = end;
    }
    if let Some(off) = (prev_end..chars.len()).find(|&k| !chars[k].is_whitespace()) {
        return Err(PluginError::Uncovered {
            plugin: plugin.name().to_string(),
            offset: off,
        });
    }
    Ok(ranges
        .into_iter()
        .map(|(start, end)| {
            let slice: String = chars[start..end].iter().collect();
            Sentence {
                tokens: tokenize_from(&slice, start),
                start,
                end,
            }
        })
        .collect())
}

/// Rule-based default splitter.
///
/// A boundary follows `.`, `!`, `?` or `؟` when the next non-space character
/// is uppercase, a digit or an opening quote, unless the word before the
/// terminator is a known abbreviation. A blank line always ends a sentence.
#[derive(Debug, Clone)]
pub struct RuleSplitter {
    abbreviations: Vec<String>,
}

const COMMON_ABBREVIATIONS: &[&str] = &[
    "Dr", "Mr", "Mrs", "Ms", "Prof", "St", "Jr", "Sr", "vs", "e.g", "i.e", "No", "Nr", "Fig",
    "approx", "M.D", "Ph.D", "etc",
];

impl RuleSplitter {
    pub fn new(abbreviations: Vec<String>) -> Self {
        Self { abbreviations }
    }

    pub fn for_language(language_code: &str) -> Self {
        let extra: &[&str] = match language_code {
            "de" => &["Hr", "Fr", "z.B", "bzw", "ca", "Str"],
            "fr" => &["M", "Mme", "Mlle", "av", "env"],
            "it" => &["Sig", "Sig.ra", "Dott", "Dott.ssa", "ecc"],
            "es" => &["Sr", "Sra", "Dra", "Avda", "aprox"],
            "tr" => &["Dr", "Doç", "Av", "vb", "örn"],
            "ro" => &["Dl", "Dna", "Str", "nr"],
            _ => &[],
        };
        Self::new(
            COMMON_ABBREVIATIONS
                .iter()
                .chain(extra)
                .map(|s| s.to_string())
                .collect(),
        )
    }

    fn is_abbreviation(&self, chars: &[char], terminator: usize) -> bool {
        let mut begin = terminator;
        while begin > 0 && !chars[begin - 1].is_whitespace() {
            begin -= 1;
        }
        let word: String = chars[begin..terminator].iter().collect();
        let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
        // Single uppercase initials ("J. Smith") never end a sentence.
        let initial = word.chars().count() == 1 && word.chars().all(char::is_uppercase);
        initial || self.abbreviations.iter().any(|a| a == word)
    }
}

impl Default for RuleSplitter {
    fn default() -> Self {
        Self::for_language("en")
    }
}

impl SentenceSplitter for RuleSplitter {
    fn name(&self) -> &str {
        "rule"
    }

    fn split(&self, text: &str) -> Result<Vec<(usize, usize)>, PluginError> {
        let chars: Vec<char> = text.chars().collect();
        let mut ranges = Vec::new();
        let mut start: Option<usize> = None;
        let mut last_non_ws = 0usize;
        let mut i = 0usize;
        let push = |ranges: &mut Vec<(usize, usize)>, s: usize, e: usize| {
            if e > s {
                ranges.push((s, e));
            }
        };
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                if c == '\n' {
                    if let Some(s) = start {
                        let mut j = i + 1;
                        while j < chars.len() && chars[j].is_whitespace() && chars[j] != '\n' {
                            j += 1;
                        }
                        if j < chars.len() && chars[j] == '\n' {
                            push(&mut ranges, s, last_non_ws + 1);
                            start = None;
                        }
                    }
                }
                i += 1;
                continue;
            }
            if start.is_none() {
                start = Some(i);
            }
            last_non_ws = i;
            if matches!(c, '.' | '!' | '?' | '؟') {
                // Absorb trailing terminators and closing quotes/brackets.
                let mut end = i + 1;
                while end < chars.len()
                    && matches!(chars[end], '.' | '!' | '?' | '؟' | '"' | '\'' | ')' | '”' | '’' | '»')
                {
                    end += 1;
                }
                let mut j = end;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                let follows_space = j > end;
                let next_ok = j < chars.len()
                    && (chars[j].is_uppercase()
                        || chars[j].is_ascii_digit()
                        || matches!(chars[j], '"' | '\'' | '“' | '«' | '(' | '‘')
                        || (chars[j].is_alphabetic() && !chars[j].is_lowercase()));
                if follows_space && next_ok && !(c == '.' && self.is_abbreviation(&chars, i)) {
                    push(&mut ranges, start.unwrap(), end);
                    start = None;
                    i = j;
                    continue;
                }
                last_non_ws = end - 1;
                i = end;
                continue;
            }
            i += 1;
        }
        if let Some(s) = start {
            push(&mut ranges, s, last_non_ws + 1);
        }
        Ok(ranges)
    }
}

/// Splitter backed by an external executable: the text is written to its
/// stdin, and it prints one `start<TAB>end` range per line on stdout.
#[derive(Debug, Clone)]
pub struct ExternalSplitter {
    name: String,
    program: String,
    args: Vec<String>,
    concurrent_safe: bool,
}

impl ExternalSplitter {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        let program = program.into();
        Self {
            name: program.clone(),
            program,
            args,
            concurrent_safe: true,
        }
    }

    pub fn with_concurrency(mut self, safe: bool) -> Self {
        self.concurrent_safe = safe;
        self
    }
}

impl SentenceSplitter for ExternalSplitter {
    fn name(&self) -> &str {
        &self.name
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent_safe
    }

    fn split(&self, text: &str) -> Result<Vec<(usize, usize)>, PluginError> {
        let fail = |detail: String| PluginError::Failed {
            plugin: self.name.clone(),
            detail,
        };
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| fail(e.to_string()))?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin
                .write_all(text.as_bytes())
                .map_err(|e| fail(e.to_string()))?;
        }
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !out.status.success() {
            return Err(fail(format!("exited with {}", out.status)));
        }
        let stdout = String::from_utf8(out.stdout).map_err(|e| fail(e.to_string()))?;
        stdout
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let (a, b) = line
                    .split_once('\t')
                    .ok_or_else(|| fail(format!("malformed range line {line:?}")))?;
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| fail(format!("malformed range line {line:?}")))
                };
                Ok((parse(a)?, parse(b)?))
            })
            .collect()
    }
}

/// Serializes calls into a splitter that is not safe for concurrent use.
pub struct Serialized<S> {
    inner: Mutex<S>,
    name: String,
}

impl<S: SentenceSplitter> Serialized<S> {
    pub fn new(inner: S) -> Self {
        let name = inner.name().to_string();
        Self {
            inner: Mutex::new(inner),
            name,
        }
    }
}

impl<S: SentenceSplitter> SentenceSplitter for Serialized<S> {
    fn name(&self) -> &str {
        &self.name
    }

    fn split(&self, text: &str) -> Result<Vec<(usize, usize)>, PluginError> {
        let guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        guard.split(text)
    }
}

/// Wraps a plugin so the engine can call it from worker threads.
pub fn shareable(plugin: ExternalSplitter) -> Box<dyn SentenceSplitter> {
    if plugin.concurrent_safe() {
        Box::new(plugin)
    } else {
        Box::new(Serialized::new(plugin))
    }
}
