//! Engine configuration: a TOML file (from `--config` or `DEID_CONFIG`)
//! whose keys can each be overridden on the command line.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use deid_core::augment::FakeChunkTable;
use deid_core::backend::{BackendClient, HttpTransport, MockTransport, SubprocessTransport, Transport};
use deid_core::pipeline::{AgeOver89Policy, MergeStrategy, RewriteMode, DEFAULT_MASK_FORMAT};
use deid_core::rules::{RulePattern, RuleSet};
use deid_core::tokenizer::{shareable, ExternalSplitter};
use deid_core::{LabelSet, RuleSplitter, SentenceSplitter};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Mask,
    Obfuscate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Http,
    Subprocess,
    /// In-process gazetteer mock; for testing only.
    Mock,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub transport: Option<TransportKind>,
    /// Base URL for HTTP backends.
    pub endpoint: Option<String>,
    /// Program and arguments for subprocess backends.
    pub command: Option<Vec<String>>,
    pub timeout_ms: Option<u64>,
    pub retries: Option<u32>,
    pub max_in_flight: Option<usize>,
    pub pool: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub language: Option<String>,
    /// `builtin:<code>` or a path to a label-set file.
    pub labels: Option<String>,
    #[serde(default)]
    pub rules: Vec<PathBuf>,
    pub default_rules: Option<bool>,
    /// External sentence splitter: program and arguments.
    pub splitter: Option<Vec<String>>,
    pub splitter_concurrent: Option<bool>,
    #[serde(default)]
    pub backend: BackendConfig,
    pub rule_only: Option<bool>,
    pub merge: Option<MergeStrategy>,
    pub mode: Option<Mode>,
    pub mask_format: Option<String>,
    pub seed: Option<u64>,
    pub fake_table: Option<PathBuf>,
    pub age_over_89: Option<AgeOver89Policy>,
}

impl EngineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let src = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: EngineConfig = toml::from_str(&src).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.rebase(base))
    }

    fn rebase(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.rules.iter_mut().for_each(fix);
        if let Some(p) = self.fake_table.as_mut() {
            fix(p);
        }
        if let Some(l) = self.labels.as_mut() {
            if !l.starts_with("builtin:") && Path::new(l.as_str()).is_relative() && base.join(&*l).exists() {
                *l = base.join(&*l).to_string_lossy().into_owned();
            }
        }
        self
    }

    pub fn language(&self) -> String {
        self.language.clone().unwrap_or_else(|| "en".into())
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        let spec = self.labels.clone().unwrap_or_else(|| format!("builtin:{}", self.language()));
        LabelSet::resolve(&spec).with_context(|| format!("loading label set {spec}"))
    }

    pub fn rule_set(&self, labels: &LabelSet) -> Result<RuleSet> {
        let mut patterns: Vec<RulePattern> = Vec::new();
        if self.default_rules.unwrap_or(true) {
            patterns.extend(RuleSet::default_patterns(labels));
        }
        for p in &self.rules {
            let src = std::fs::read_to_string(p).with_context(|| format!("reading rules {}", p.display()))?;
            patterns.extend(RuleSet::parse_file(&src).with_context(|| format!("in {}", p.display()))?);
        }
        Ok(RuleSet::compile(patterns, labels)?)
    }

    pub fn splitter(&self) -> Result<Box<dyn SentenceSplitter>> {
        match &self.splitter {
            None => Ok(Box::new(RuleSplitter::for_language(&self.language()))),
            Some(cmd) => {
                let (prog, args) = cmd.split_first().context("splitter command is empty")?;
                let ext = ExternalSplitter::new(prog.clone(), args.to_vec())
                    .with_concurrency(self.splitter_concurrent.unwrap_or(false));
                Ok(shareable(ext))
            }
        }
    }

    pub fn fake_table(&self) -> Result<FakeChunkTable> {
        match &self.fake_table {
            Some(p) => FakeChunkTable::from_path(p).map_err(Into::into),
            None => Ok(FakeChunkTable::default_table()),
        }
    }

    pub fn rewrite_mode(&self) -> Result<RewriteMode> {
        Ok(match self.mode.unwrap_or_default() {
            Mode::Mask => RewriteMode::Mask {
                format: self.mask_format.clone().unwrap_or_else(|| DEFAULT_MASK_FORMAT.into()),
            },
            Mode::Obfuscate => RewriteMode::Obfuscate {
                seed: self.seed.context("obfuscation needs a seed (--seed or `seed` in the config)")?,
                age_over_89: self.age_over_89.unwrap_or_default(),
            },
        })
    }

    /// `None` when no backend is configured.
    pub fn backend(&self, labels: &LabelSet) -> Result<Option<BackendClient>> {
        let b = &self.backend;
        let kind = match (b.transport, &b.endpoint, &b.command) {
            (Some(k), _, _) => k,
            (None, Some(_), _) => TransportKind::Http,
            (None, None, Some(_)) => TransportKind::Subprocess,
            (None, None, None) => return Ok(None),
        };
        let timeout = Duration::from_millis(b.timeout_ms.unwrap_or(30_000));
        let transport: Arc<dyn Transport> = match kind {
            TransportKind::Http => {
                let url = b.endpoint.as_deref().context("HTTP backend needs an endpoint")?;
                Arc::new(HttpTransport::new(url, timeout))
            }
            TransportKind::Subprocess => {
                let cmd = b.command.as_ref().context("subprocess backend needs a command")?;
                let (prog, args) = cmd.split_first().context("backend command is empty")?;
                Arc::new(SubprocessTransport::new(prog.clone(), args.to_vec(), b.pool.unwrap_or(1), timeout))
            }
            TransportKind::Mock => Arc::new(MockTransport::new(labels.clone())),
        };
        let client = BackendClient::new(transport, labels.clone())
            .with_retries(b.retries.unwrap_or(3), Duration::from_millis(200))
            .with_max_in_flight(b.max_in_flight.unwrap_or(8));
        Ok(Some(client))
    }

    /// Startup validation: everything referenced must exist and parse.
    pub fn validate(&self) -> Result<()> {
        for p in &self.rules {
            if !p.exists() {
                bail!("rule file {} does not exist", p.display());
            }
        }
        if let Some(p) = &self.fake_table {
            if !p.exists() {
                bail!("fake-chunk table {} does not exist", p.display());
            }
        }
        let labels = self.label_set()?;
        self.rule_set(&labels)?;
        self.rewrite_mode()?;
        if self.mode == Some(Mode::Obfuscate) {
            self.fake_table()?;
        }
        Ok(())
    }
}
