//! Per-language label registries.
//!
//! A [`LabelSet`] splits entity labels into two tiers: labels detected by the
//! deterministic rule engine and labels detected by an external NER model.
//! The `priority` list orders every label for tie-breaking when spans from
//! different sources compete.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelSetError {
    #[error("invalid label name {0:?}")]
    InvalidName(String),
    #[error("label {0:?} is listed in both rule_labels and model_labels")]
    BothTiers(String),
    #[error("label {0:?} is listed twice")]
    Duplicate(String),
    #[error("priority must be a permutation of all labels (offending entry: {0:?})")]
    BadPriority(String),
    #[error("unknown builtin label set {0:?}")]
    UnknownBuiltin(String),
    #[error("cannot read label set file: {0}")]
    Io(String),
    #[error("cannot parse label set file: {0}")]
    Parse(String),
}

/// Label names are uppercase ASCII words, optionally joined by a single
/// hyphen, underscore or space (`LOCATION-OTHER`, `MEDICAL RECORD`).
pub fn is_valid_label_name(name: &str) -> bool {
    let bytes = name.as_bytes();
    if bytes.is_empty() || !bytes[0].is_ascii_uppercase() {
        return false;
    }
    let mut prev_sep = false;
    for &b in bytes {
        match b {
            b'A'..=b'Z' => prev_sep = false,
            b'-' | b'_' | b' ' => {
                if prev_sep {
                    return false;
                }
                prev_sep = true;
            }
            _ => return false,
        }
    }
    !prev_sep
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelSet {
    language_code: String,
    rule_labels: Vec<String>,
    model_labels: Vec<String>,
    priority: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct LabelSetFile {
    language: String,
    #[serde(default)]
    rule_labels: Vec<String>,
    #[serde(default)]
    model_labels: Vec<String>,
    #[serde(default)]
    priority: Option<Vec<String>>,
}

impl LabelSet {
    /// Builds a label set. When `priority` is `None` the rule labels come
    /// first, followed by the model labels, each in their given order.
    pub fn new(
        language_code: impl Into<String>,
        rule_labels: Vec<String>,
        model_labels: Vec<String>,
        priority: Option<Vec<String>>,
    ) -> Result<Self, LabelSetError> {
        let mut seen = BTreeSet::new();
        for name in &rule_labels {
            if !is_valid_label_name(name) {
                return Err(LabelSetError::InvalidName(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                return Err(LabelSetError::Duplicate(name.clone()));
            }
        }
        let rule_set = seen.clone();
        for name in &model_labels {
            if !is_valid_label_name(name) {
                return Err(LabelSetError::InvalidName(name.clone()));
            }
            if rule_set.contains(name.as_str()) {
                return Err(LabelSetError::BothTiers(name.clone()));
            }
            if !seen.insert(name.as_str()) {
                return Err(LabelSetError::Duplicate(name.clone()));
            }
        }
        let priority = match priority {
            Some(p) => {
                let mut pseen = BTreeSet::new();
                for name in &p {
                    if !seen.contains(name.as_str()) || !pseen.insert(name.as_str()) {
                        return Err(LabelSetError::BadPriority(name.clone()));
                    }
                }
                if pseen.len() != seen.len() {
                    let missing = seen.difference(&pseen).next().unwrap();
                    return Err(LabelSetError::BadPriority((*missing).to_string()));
                }
                p
            }
            None => rule_labels.iter().chain(&model_labels).cloned().collect(),
        };
        Ok(Self {
            language_code: language_code.into(),
            rule_labels,
            model_labels,
            priority,
        })
    }

    /// Loads a TOML label set file:
    ///
    /// ```toml
    /// language = "en"
    /// rule_labels = ["EMAIL"]
    /// model_labels = ["PATIENT", "DATE"]
    /// ```
    pub fn from_toml_str(src: &str) -> Result<Self, LabelSetError> {
        let file: LabelSetFile =
            toml::from_str(src).map_err(|e| LabelSetError::Parse(e.to_string()))?;
        Self::new(file.language, file.rule_labels, file.model_labels, file.priority)
    }

    pub fn from_path(path: &Path) -> Result<Self, LabelSetError> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| LabelSetError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&src)
    }

    /// Resolves `builtin:<lang>`, a bare language code, or a file path.
    pub fn resolve(spec: &str) -> Result<Self, LabelSetError> {
        if let Some(code) = spec.strip_prefix("builtin:") {
            return Self::builtin(code);
        }
        let path = Path::new(spec);
        if path.exists() {
            return Self::from_path(path);
        }
        Self::builtin(spec)
    }

    pub fn builtin(language_code: &str) -> Result<Self, LabelSetError> {
        let model: &[&str] = match language_code {
            "en" => ENGLISH_MODEL_LABELS,
            "de" | "it" | "fr" => &[
                "AGE", "CITY", "COUNTRY", "DATE", "DOCTOR", "HOSPITAL", "IDNUM",
                "ORGANIZATION", "PATIENT", "PHONE", "PROFESSION", "STREET", "ZIP",
            ],
            "tr" => &[
                "AGE", "CITY", "COUNTRY", "DATE", "DOCTOR", "HOSPITAL", "IDNUM",
                "LOCATION", "MEDICAL RECORD", "ORGANIZATION", "PATIENT", "PHONE",
                "PROFESSION", "STREET", "ZIP", "FAMILY",
            ],
            "es" => &[
                "AGE", "CITY", "COUNTRY", "DATE", "DOCTOR", "EMAIL", "HOSPITAL", "ID",
                "MEDICAL RECORD", "ORGANIZATION", "PATIENT", "PHONE", "PROFESSION",
                "SEX", "SSN", "STREET", "ZIP",
            ],
            "ro" => &[
                "AGE", "CITY", "COUNTRY", "DATE", "DOCTOR", "EMAIL", "HOSPITAL", "IDNUM",
                "LOCATION", "MEDICAL RECORD", "ORGANIZATION", "PATIENT", "PHONE",
                "PROFESSION", "STREET", "ZIP", "FAX",
            ],
            "ar" => &[
                "AGE", "CITY", "COUNTRY", "DATE", "DOCTOR", "HOSPITAL", "IDNUM",
                "ORGANIZATION", "PATIENT", "PHONE", "PROFESSION", "STREET", "ZIP",
            ],
            other => return Err(LabelSetError::UnknownBuiltin(other.to_string())),
        };
        let model: Vec<String> = model.iter().map(|s| s.to_string()).collect();
        // Labels promoted to the model tier for a language leave the rule tier.
        let rule = RULE_LABELS
            .iter()
            .filter(|l| !model.iter().any(|m| m == *l))
            .map(|s| s.to_string())
            .collect();
        Self::new(language_code, rule, model, None)
    }

    pub fn english() -> Self {
        Self::builtin("en").expect("embedded English label set is valid")
    }

    pub fn language_code(&self) -> &str {
        &self.language_code
    }

    pub fn rule_labels(&self) -> &[String] {
        &self.rule_labels
    }

    pub fn model_labels(&self) -> &[String] {
        &self.model_labels
    }

    pub fn priority(&self) -> &[String] {
        &self.priority
    }

    pub fn contains(&self, label: &str) -> bool {
        self.is_rule_label(label) || self.is_model_label(label)
    }

    pub fn is_rule_label(&self, label: &str) -> bool {
        self.rule_labels.iter().any(|l| l == label)
    }

    pub fn is_model_label(&self, label: &str) -> bool {
        self.model_labels.iter().any(|l| l == label)
    }

    /// Position in the priority list; lower ranks win ties. Unknown labels
    /// rank after every known one.
    pub fn priority_rank(&self, label: &str) -> usize {
        self.priority
            .iter()
            .position(|l| l == label)
            .unwrap_or(self.priority.len())
    }

    pub fn all_labels(&self) -> impl Iterator<Item = &str> {
        self.rule_labels.iter().chain(&self.model_labels).map(String::as_str)
    }

    /// Hash advertised by model backends: SHA-256 over the sorted model-tier
    /// labels joined with `\n`, as lowercase hex.
    pub fn model_label_hash(&self) -> String {
        label_list_hash(self.model_labels.iter().map(String::as_str))
    }

    /// Returns a copy restricted to the given model labels (rule tier dropped).
    pub fn model_subset<S: AsRef<str>>(&self, labels: &[S]) -> Result<Self, LabelSetError> {
        let model = labels.iter().map(|s| s.as_ref().to_string()).collect();
        Self::new(self.language_code.clone(), Vec::new(), model, None)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} rule, {} model labels)",
            self.language_code,
            self.rule_labels.len(),
            self.model_labels.len()
        )
    }
}

pub fn label_list_hash<'a>(labels: impl IntoIterator<Item = &'a str>) -> String {
    let mut sorted: Vec<&str> = labels.into_iter().collect();
    sorted.sort_unstable();
    sorted.dedup();
    let digest = Sha256::digest(sorted.join("\n").as_bytes());
    hex::encode(digest)
}

pub const RULE_LABELS: &[&str] = &[
    "ACCOUNT", "DLN", "EMAIL", "FAX", "IP", "LICENSE", "PLATE", "SSN", "URL", "VIN",
];

pub const ENGLISH_MODEL_LABELS: &[&str] = &[
    "AGE",
    "CITY",
    "COUNTRY",
    "DATE",
    "DEVICE",
    "DOCTOR",
    "HOSPITAL",
    "IDNUM",
    "LOCATION-OTHER",
    "MEDICAL RECORD",
    "ORGANIZATION",
    "PATIENT",
    "PHONE",
    "PROFESSION",
    "STATE",
    "STREET",
    "USERNAME",
    "ZIP",
];

/// Languages with a shipped label set.
pub const BUILTIN_LANGUAGES: &[&str] = &["en", "de", "it", "fr", "tr", "es", "ro", "ar"];
