//! Extraction prompt construction and parsing of `BEGINER_<LABEL> chunk ENDNER`
//! markup returned by a language model.
//!
//! The engine never talks to a model itself: it renders prompts and parses
//! responses read from files or stdin. Parsing is total; every quality
//! problem in a response becomes a [`Diagnostic`].

use serde::{Deserialize, Serialize};

use crate::align::align;
use crate::annotation::{Document, EntitySpan, Source};
use crate::labels::LabelSet;

const TEMPLATE: &str = include_str!("data/prompt_template.txt");
const BEGIN: &str = "BEGINER_";
const END: &str = "ENDNER";

/// Chunks whose projection onto the original is less similar than this are
/// dropped.
pub const MIN_LOCAL_SIMILARITY: f64 = 0.7;

/// `(label, name used in the prompt, definition)`.
const DEFINITIONS: &[(&str, &str, &str)] = &[
    ("AGE", "AGE", "Identifies the age number or age-related information. Example: In \"88 years old,\" 88 would be marked as AGE. In \"in his 50's,\"50's would be marked as AGE."),
    ("CITY", "CITY", "Identifies the name of a city."),
    ("COUNTRY", "COUNTRY", "Identifies the name of a country."),
    ("DATE", "DATE", "Identifies specific dates or years. Example: In \"He was admitted on 03/29/2089,\" 03/29/2089 would be marked as DATE. In \"His surgery was in the 1980's,\" 1980's would be marked as DATE. In \"His record was marked on 2089-08-24\" 2089-08-24 would be marked at DATE."),
    ("DEVICE", "DEVICE", "Identifies serial numbers, item code or product code of a medical device mentioned. Example: In \"The AA 737 pacemaker was implanted,\" AA 737 would be marked as DEVICE."),
    ("DOCTOR", "DOCTOR", "Identifies the name of a doctor or healthcare professional. Only the name should be marked, not the title such as \"Dr.\", \"M.D.\"."),
    ("HOSPITAL", "HOSPITAL", "Identifies the name of a hospital or nursing home."),
    ("IDNUM", "IDNUM", "Identifies identification numbers such as medical record or patient numbers."),
    ("LOCATION-OTHER", "LOCATION", "Identifies specific locations related to healthcare, excluding city or country."),
    ("LOCATION", "LOCATION", "Identifies specific locations related to healthcare, excluding city or country."),
    ("MEDICAL RECORD", "MEDICALRECORD", "Identifies medical record numbers or similar identifiers."),
    ("ORGANIZATION", "ORGANIZATION", "Identifies names of organizations or institutions."),
    ("PATIENT", "PATIENT", "Identifies the patient's name. Only the name should be marked, not titles like \"Mr.\" or \"Mrs.\""),
    ("PHONE", "PHONE", "Identifies phone numbers, including fax numbers."),
    ("PROFESSION", "PROFESSION", "Identifies professions or job titles."),
    ("STATE", "STATE", "Identifies the name of a state or region."),
    ("STREET", "STREET", "Identifies street addresses."),
    ("USERNAME", "USERNAME", "Identifies usernames or account IDs."),
    ("ZIP", "ZIP", "Identifies postal or zip codes."),
    ("EMAIL", "EMAIL", "Identifies email addresses."),
    ("FAX", "FAX", "Identifies fax numbers."),
    ("ID", "ID", "Identifies personal identification numbers such as national ID card numbers."),
    ("SSN", "SSN", "Identifies social security numbers."),
    ("SEX", "SEX", "Identifies the patient's sex or gender when stated explicitly."),
    ("FAMILY", "FAMILY", "Identifies names of family members or relatives of the patient."),
    ("ACCOUNT", "ACCOUNT", "Identifies bank or billing account numbers."),
    ("DLN", "DLN", "Identifies driver's license numbers."),
    ("IP", "IP", "Identifies IP addresses."),
    ("LICENSE", "LICENSE", "Identifies certificate or license numbers."),
    ("PLATE", "PLATE", "Identifies vehicle license plate numbers."),
    ("URL", "URL", "Identifies web addresses."),
    ("VIN", "VIN", "Identifies vehicle identification numbers."),
];

fn definition(label: &str) -> (String, String) {
    DEFINITIONS
        .iter()
        .find(|(l, _, _)| *l == label)
        .map(|(_, name, def)| (name.to_string(), def.to_string()))
        .unwrap_or_else(|| {
            (
                label.replace(' ', ""),
                format!("Identifies {} information.", label.to_lowercase()),
            )
        })
}

/// Name a label is written with inside markup (`MEDICAL RECORD` becomes
/// `MEDICALRECORD`).
pub fn prompt_name(label: &str) -> String {
    definition(label).0
}

/// Renders the extraction prompt for the model-tier labels of `labels`,
/// with `note` interpolated verbatim.
pub fn build_prompt(note: &Document, labels: &LabelSet) -> String {
    let mut entities = String::new();
    for label in labels.model_labels() {
        let (name, def) = definition(label);
        entities.push_str(&format!("{name} ({def})\n"));
    }
    let (head, rest) = TEMPLATE.split_once("{entities}").expect("template has entity slot");
    let (mid, tail) = rest
        .split_once("{clinical_note}")
        .expect("template has note slot");
    let mut out = String::with_capacity(TEMPLATE.len() + entities.len() + note.text().len());
    out.push_str(head);
    out.push_str(&entities);
    out.push_str(mid);
    out.push_str(note.text());
    out.push_str(tail);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticKind {
    UnknownLabel,
    Unbalanced,
    TextEdited,
    ExtraTokens,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Code-point offset into the marked text.
    pub location: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkupParse {
    pub spans: Vec<EntitySpan>,
    pub diagnostics: Vec<Diagnostic>,
    pub alignment_score: f64,
}

/// Maps a marker's label run onto a label of the set: exact match after
/// `_` -> space, then match ignoring spaces and underscores, then the
/// prompt alias (`LOCATION` for `LOCATION-OTHER`).
pub fn resolve_marker_label(run: &str, labels: &LabelSet) -> Option<String> {
    let spaced = run.replace('_', " ");
    if labels.contains(&spaced) {
        return Some(spaced);
    }
    let squash = |s: &str| s.chars().filter(|c| *c != ' ' && *c != '_').collect::<String>();
    let key = squash(run);
    if let Some(l) = labels.all_labels().find(|l| squash(l) == key) {
        return Some(l.to_string());
    }
    labels
        .all_labels()
        .find(|l| prompt_name(l) == key)
        .map(str::to_string)
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn starts_with_at(chars: &[char], i: usize, pat: &str) -> bool {
    let mut k = i;
    for p in pat.chars() {
        if chars.get(k) != Some(&p) {
            return false;
        }
        k += 1;
    }
    true
}

struct OpenChunk {
    label: Result<String, String>,
    start: usize,
    marker_at: usize,
}

struct Chunk {
    label: String,
    start: usize,
    end: usize,
    marker_at: usize,
}

/// First sentence end inside `cleaned[from..to]`, exclusive of the terminator.
fn sentence_end(cleaned: &[char], from: usize, to: usize) -> usize {
    for k in from..to {
        let c = cleaned[k];
        if c == '\n' {
            return k;
        }
        if matches!(c, '.' | '!' | '?' | '؟')
            && k > from
            && (k + 1 >= cleaned.len() || cleaned[k + 1].is_whitespace())
        {
            return k;
        }
    }
    to
}

fn trim_range(cleaned: &[char], mut s: usize, mut e: usize) -> (usize, usize) {
    while s < e && cleaned[s].is_whitespace() {
        s += 1;
    }
    while e > s && cleaned[e - 1].is_whitespace() {
        e -= 1;
    }
    (s, e)
}

const LEADING_TITLES: &[&str] = &["Dr.", "Dr", "Mr.", "Mr", "Mrs.", "Mrs", "Ms.", "Ms", "Prof.", "Prof"];
const TRAILING_SUFFIXES: &[&str] = &["M.D.", "MD", "Ph.D.", "PhD", "'s", "’s"];

fn extra_tokens(label: &str, text: &str) -> Option<String> {
    if let Some(first) = text.split_whitespace().next() {
        if text.split_whitespace().count() > 1 && LEADING_TITLES.contains(&first) {
            return Some(format!("chunk starts with title {first:?}"));
        }
    }
    let trimmed = text.trim_end_matches([',', ';']);
    for suf in TRAILING_SUFFIXES {
        if trimmed.len() > suf.len() && trimmed.ends_with(suf) {
            let decade = label == "DATE" || label == "AGE";
            if decade && suf.ends_with('s') {
                continue;
            }
            return Some(format!("chunk ends with {suf:?}"));
        }
    }
    if trimmed.len() != text.len() {
        return Some("chunk ends with punctuation".into());
    }
    None
}

/// Parses marked model output against the original note. Never fails.
pub fn parse_markup(original: &Document, marked: &str, labels: &LabelSet) -> MarkupParse {
    let chars: Vec<char> = marked.chars().collect();
    let mut cleaned: Vec<char> = Vec::with_capacity(chars.len());
    let mut diagnostics = Vec::new();
    let mut chunks: Vec<Chunk> = Vec::new();
    let mut open: Option<OpenChunk> = None;

    let mut close = |open: OpenChunk,
                     end: usize,
                     balanced: bool,
                     cleaned: &[char],
                     diagnostics: &mut Vec<Diagnostic>| {
        let end = if balanced {
            end
        } else {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::Unbalanced,
                location: open.marker_at,
                detail: "chunk not closed by ENDNER; closed at next marker or sentence end".into(),
            });
            sentence_end(cleaned, open.start, end)
        };
        let (s, e) = trim_range(cleaned, open.start, end);
        if let Ok(label) = open.label {
            if s < e {
                chunks.push(Chunk {
                    label,
                    start: s,
                    end: e,
                    marker_at: open.marker_at,
                });
            }
        }
    };

    let mut i = 0usize;
    while i < chars.len() {
        let prev_word = i > 0 && is_word(chars[i - 1]);
        if !prev_word && starts_with_at(&chars, i, BEGIN) {
            let marker_at = i;
            let mut j = i + BEGIN.len();
            // Tolerate the spaced form `BEGINER_ LABEL`.
            if !chars.get(j).is_some_and(|c| c.is_ascii_uppercase()) {
                let mut k = j;
                while chars.get(k).is_some_and(|c| *c == ' ' || *c == '\t') {
                    k += 1;
                }
                if chars.get(k).is_some_and(|c| c.is_ascii_uppercase()) {
                    j = k;
                }
            }
            let run_start = j;
            while chars
                .get(j)
                .is_some_and(|c| c.is_ascii_uppercase() || *c == '_' || *c == '-')
            {
                j += 1;
            }
            let run: String = chars[run_start..j].iter().collect();
            let run = run.trim_end_matches(['_', '-']).to_string();
            if chars.get(j).is_some_and(|c| c.is_whitespace()) {
                j += 1;
            }
            if let Some(prev) = open.take() {
                let at = cleaned.len();
                close(prev, at, false, &cleaned, &mut diagnostics);
            }
            let label = match resolve_marker_label(&run, labels) {
                Some(l) => Ok(l),
                None => {
                    diagnostics.push(Diagnostic {
                        kind: DiagnosticKind::UnknownLabel,
                        location: marker_at,
                        detail: run.clone(),
                    });
                    Err(run)
                }
            };
            open = Some(OpenChunk {
                label,
                start: cleaned.len(),
                marker_at,
            });
            i = j;
            continue;
        }
        if starts_with_at(&chars, i, END)
            && !chars.get(i + END.len()).is_some_and(|c| is_word(*c))
            && !prev_word
        {
            match open.take() {
                Some(o) => {
                    if cleaned.len() > o.start && cleaned.last().is_some_and(|c| c.is_whitespace()) {
                        cleaned.pop();
                    }
                    let at = cleaned.len();
                    close(o, at, true, &cleaned, &mut diagnostics);
                }
                None => {
                    if cleaned.last().is_some_and(|c| c.is_whitespace()) {
                        cleaned.pop();
                    }
                    diagnostics.push(Diagnostic {
                        kind: DiagnosticKind::Unbalanced,
                        location: i,
                        detail: "ENDNER without an open chunk".into(),
                    });
                }
            }
            i += END.len();
            continue;
        }
        cleaned.push(chars[i]);
        i += 1;
    }
    if let Some(o) = open.take() {
        let at = cleaned.len();
        close(o, at, false, &cleaned, &mut diagnostics);
    }

    let orig: Vec<char> = original.text().chars().collect();
    let alignment = align(&cleaned, &orig);
    let score = alignment.score();
    if cleaned != orig {
        diagnostics.push(Diagnostic {
            kind: DiagnosticKind::TextEdited,
            location: 0,
            detail: format!(
                "text differs from the original after removing markers ({} of {} chars aligned)",
                alignment.matched,
                cleaned.len().max(orig.len())
            ),
        });
    }

    let mut spans: Vec<EntitySpan> = Vec::new();
    for c in chunks {
        let Some((start, end, sim)) = alignment.project(c.start, c.end) else {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::TextEdited,
                location: c.marker_at,
                detail: format!("{} chunk could not be located in the original", c.label),
            });
            continue;
        };
        if sim < MIN_LOCAL_SIMILARITY {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::TextEdited,
                location: c.marker_at,
                detail: format!("{} chunk dropped: similarity {sim:.2}", c.label),
            });
            continue;
        }
        if spans.last().is_some_and(|p: &EntitySpan| p.end > start) {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::TextEdited,
                location: c.marker_at,
                detail: format!("{} chunk overlaps the previous chunk after alignment", c.label),
            });
            continue;
        }
        let text: String = orig[start..end].iter().collect();
        if let Some(detail) = extra_tokens(&c.label, &text) {
            diagnostics.push(Diagnostic {
                kind: DiagnosticKind::ExtraTokens,
                location: c.marker_at,
                detail: format!("{}: {detail}", c.label),
            });
        }
        spans.push(EntitySpan::new(c.label, start, end, Source::Llm));
    }

    MarkupParse {
        spans,
        diagnostics,
        alignment_score: score,
    }
}

/// Renders spans back into canonical markup over the document text.
pub fn render_markup(doc: &Document, spans: &[EntitySpan]) -> String {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| s.start);
    let mut out = String::new();
    let mut pos = 0;
    for s in sorted {
        out.push_str(doc.slice(pos, s.start).unwrap_or_default());
        out.push_str(&format!(
            "{BEGIN}{} {} {END}",
            prompt_name(&s.label).replace(' ', "_"),
            doc.slice(s.start, s.end).unwrap_or_default()
        ));
        pos = s.end;
    }
    out.push_str(doc.slice(pos, doc.char_len()).unwrap_or_default());
    out
}
