//! `deid`: command-line front end of the de-identification engine.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{EngineConfig, Mode, TransportKind};
use deid_core::pipeline::{AgeOver89Policy, MergeStrategy};

#[derive(Parser, Debug)]
#[command(name = "deid", version, about = "Clinical text de-identification and NER evaluation")]
pub struct Cli {
    /// Engine configuration file (TOML).
    #[arg(long, global = true, env = "DEID_CONFIG")]
    config: Option<PathBuf>,

    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detect PHI and rewrite it by masking or obfuscation.
    Deid(DeidArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
    /// Build synthetic training sentences from a CoNLL corpus.
    Augment(AugmentArgs),
    /// Convert marked LLM output into spans over the original note.
    ParseLlm(ParseLlmArgs),
    /// Print the extraction prompt for a note.
    Prompt(PromptArgs),
    /// Print word-punct tokens with offsets as JSON lines.
    Tokenize(TokenizeArgs),
    /// Check that the configured backend is reachable and agrees on labels.
    Healthcheck(EngineArgs),
}

/// Options shared by commands that build the engine. Each overrides the
/// matching config key.
#[derive(Args, Debug, Default, Clone)]
pub struct EngineArgs {
    /// Language code; selects the builtin label set and splitter.
    #[arg(long)]
    language: Option<String>,
    /// Label set: `builtin:<code>` or a label-set file.
    #[arg(long)]
    labels: Option<String>,
    /// Additional rule files.
    #[arg(long = "rules")]
    rules: Vec<PathBuf>,
    /// Leave out the shipped rule patterns.
    #[arg(long)]
    no_default_rules: bool,
    /// HTTP backend base URL.
    #[arg(long)]
    backend: Option<String>,
    /// Subprocess backend command line (split on whitespace).
    #[arg(long)]
    backend_cmd: Option<String>,
    #[arg(long, value_enum)]
    backend_transport: Option<TransportKind>,
    #[arg(long)]
    backend_timeout_ms: Option<u64>,
    #[arg(long)]
    backend_retries: Option<u32>,
}

impl EngineArgs {
    fn apply(&self, cfg: &mut EngineConfig) {
        if let Some(l) = &self.language {
            cfg.language = Some(l.clone());
        }
        if let Some(l) = &self.labels {
            cfg.labels = Some(l.clone());
        }
        cfg.rules.extend(self.rules.iter().cloned());
        if self.no_default_rules {
            cfg.default_rules = Some(false);
        }
        if let Some(u) = &self.backend {
            cfg.backend.endpoint = Some(u.clone());
            cfg.backend.transport.get_or_insert(TransportKind::Http);
        }
        if let Some(c) = &self.backend_cmd {
            cfg.backend.command = Some(c.split_whitespace().map(str::to_string).collect());
            if self.backend.is_none() {
                cfg.backend.transport = Some(TransportKind::Subprocess);
            }
        }
        if let Some(t) = self.backend_transport {
            cfg.backend.transport = Some(t);
        }
        if let Some(t) = self.backend_timeout_ms {
            cfg.backend.timeout_ms = Some(t);
        }
        if let Some(r) = self.backend_retries {
            cfg.backend.retries = Some(r);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    /// By extension: .json span-JSON, .conll/.bio CoNLL, anything else text.
    Auto,
    Text,
    Json,
    Conll,
}

#[derive(Args, Debug)]
pub struct DeidArgs {
    /// Input files; none or `-` reads text from stdin and writes to stdout.
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum, default_value = "auto")]
    input_format: InputFormat,
    /// For JSON/CoNLL inputs: rewrite the given spans instead of detecting.
    #[arg(long)]
    use_spans: bool,
    /// Directory for rewritten files and sidecars.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Audit JSON path when reading stdin.
    #[arg(long)]
    audit: Option<PathBuf>,
    /// Use only the rule engine.
    #[arg(long)]
    rule_only: bool,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    /// RULE_PRIORITY, MODEL_PRIORITY or LONGEST.
    #[arg(long)]
    merge: Option<MergeStrategy>,
    /// Mask replacement; `{label}` is substituted.
    #[arg(long)]
    mask_format: Option<String>,
    #[arg(long)]
    fake_table: Option<PathBuf>,
    #[arg(long, value_enum)]
    age_over_89: Option<AgePolicyArg>,
    /// Also write the surrogate map (re-identifying!).
    #[arg(long)]
    write_surrogates: bool,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Stop at the first failing input.
    #[arg(long)]
    fail_fast: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgePolicyArg {
    Keep,
    Aggregate,
}

impl From<AgePolicyArg> for AgeOver89Policy {
    fn from(a: AgePolicyArg) -> Self {
        match a {
            AgePolicyArg::Keep => AgeOver89Policy::Keep,
            AgePolicyArg::Aggregate => AgeOver89Policy::Aggregate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    Chunk,
    Token,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "aggregate_only")]
    gold: Option<PathBuf>,
    #[arg(long, required_unless_present = "aggregate_only")]
    pred: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "chunk")]
    mode: EvalMode,
    /// Restrict chunk scoring to this label set.
    #[arg(long)]
    labels: Option<String>,
    /// Overlap matching instead of strict (diagnostic only).
    #[arg(long)]
    lenient: bool,
    #[arg(long)]
    json_out: Option<PathBuf>,
    #[arg(long)]
    csv_out: Option<PathBuf>,
    /// Macro-average the F1 column of a per-label CSV and exit.
    #[arg(long, conflicts_with_all = ["gold", "pred"])]
    aggregate_only: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TranslatorKind {
    Identity,
    External,
}

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Input CoNLL corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// Output CoNLL file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    /// Comma-separated target labels; defaults to the language preset.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[arg(long, value_enum, default_value = "identity")]
    translator: TranslatorKind,
    /// External translator command line (split on whitespace).
    #[arg(long)]
    translator_cmd: Option<String>,
    /// Send all sentences to the translator as one NDJSON batch.
    #[arg(long)]
    ndjson: bool,
    #[arg(long)]
    fake_table: Option<PathBuf>,
    /// Refill every placeholder with its original chunk.
    #[arg(long, conflicts_with = "fake_table")]
    originals_only: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the input corpus before the new sentences.
    #[arg(long)]
    append: bool,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args, Debug)]
pub struct ParseLlmArgs {
    /// Original note files; the doc id is the file stem.
    originals: Vec<PathBuf>,
    /// Marked response for a single original.
    #[arg(long)]
    marked: Option<PathBuf>,
    /// Directory holding `<doc_id>.marked.txt` responses.
    #[arg(long)]
    marked_dir: Option<PathBuf>,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    labels: Option<String>,
    /// Span-JSON output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Diagnostics JSON output.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PromptArgs {
    /// Note file, or `-` for stdin.
    note: PathBuf,
    #[arg(long)]
    language: Option<String>,
    #[arg(long)]
    labels: Option<String>,
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    /// Text to tokenize; stdin when absent.
    text: Option<String>,
    #[arg(long, conflicts_with = "text")]
    file: Option<PathBuf>,
    /// Emit sentences (default splitter) instead of tokens.
    #[arg(long)]
    sentences: bool,
    #[arg(long)]
    language: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let result = EngineConfig::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Deid(a) => commands::deid(cfg, a),
        Command::Eval(a) => commands::eval(a),
        Command::Augment(a) => commands::augment(cfg, a),
        Command::ParseLlm(a) => commands::parse_llm(cfg, a),
        Command::Prompt(a) => commands::prompt(cfg, a),
        Command::Tokenize(a) => commands::tokenize(cfg, a),
        Command::Healthcheck(a) => commands::healthcheck(cfg, a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
