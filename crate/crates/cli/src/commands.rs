use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use log::{error, info, warn};
use rayon::prelude::*;
use serde::Serialize;

use deid_core::annotation::{Document, EntitySpan, Repair, Source};
use deid_core::augment::{self, ExternalTranslator, FakeChunkTable, IdentityTranslator, TranslatorPlugin};
use deid_core::backend::ModelBackend;
use deid_core::conll::{self, AnnotatedDocument, ConllRecord};
use deid_core::eval::{self, ChunkMatching};
use deid_core::markup;
use deid_core::pipeline::{rewrite_document, AuditEntry, Detector, DeidOutput, RewriteMode};
use deid_core::{split_sentences, word_punct_tokenize, LabelSet, RuleSplitter};

use crate::config::{EngineConfig, Mode};
use crate::{
    AugmentArgs, DeidArgs, EngineArgs, EvalArgs, EvalMode, InputFormat, ParseLlmArgs, PromptArgs, TokenizeArgs,
    TranslatorKind,
};

const EXIT_LEAK: u8 = 2;

fn read_input(path: &Path) -> Result<String> {
    if path == Path::new("-") {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "doc".into(), |s| s.to_string_lossy().into_owned())
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building worker pool")
}

fn read_conll_file(path: &Path, repair: Repair) -> Result<Vec<ConllRecord>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    conll::read_conll(BufReader::new(f), repair).with_context(|| format!("{}", path.display()))
}

fn read_json_file(path: &Path) -> Result<Vec<AnnotatedDocument>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    conll::read_annotations(BufReader::new(f)).with_context(|| format!("{}", path.display()))
}

fn is_conll(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("conll" | "bio" | "iob" | "tsv")
    )
}

/// Span-JSON or CoNLL, by extension.
fn read_annotated(path: &Path, labels: Option<&LabelSet>, source: Source) -> Result<Vec<AnnotatedDocument>> {
    if !is_conll(path) {
        return read_json_file(path);
    }
    read_conll_file(path, Repair::Relaxed)?
        .iter()
        .enumerate()
        .map(|(i, r)| {
            conll::record_to_annotated(r, &i.to_string(), Repair::Relaxed, labels, source)
                .with_context(|| format!("{}: record {i}", path.display()))
        })
        .collect()
}

// ---------------------------------------------------------------- deid

struct Unit {
    doc: Document,
    /// Pre-computed spans to rewrite instead of running detection.
    spans: Option<Vec<EntitySpan>>,
}

#[derive(Serialize)]
struct LeakRange {
    start: usize,
    end: usize,
}

/// Audit sidecar: offsets and labels only, never original text.
#[derive(Serialize)]
struct AuditFile<'a> {
    doc_id: &'a str,
    mode: &'static str,
    spans: &'a [EntitySpan],
    replacements: &'a [AuditEntry],
    leaks: Vec<LeakRange>,
}

fn audit_file<'a>(out: &'a DeidOutput, mode: &RewriteMode) -> AuditFile<'a> {
    AuditFile {
        doc_id: &out.doc_id,
        mode: match mode {
            RewriteMode::Mask { .. } => "mask",
            RewriteMode::Obfuscate { .. } => "obfuscate",
        },
        spans: &out.spans,
        replacements: &out.audit,
        leaks: out.leaks.iter().map(|l| LeakRange { start: l.start, end: l.end }).collect(),
    }
}

fn deid_units(args: &DeidArgs, language: &str) -> Result<Vec<Unit>> {
    let mut units = Vec::new();
    for path in &args.inputs {
        let format = match args.input_format {
            InputFormat::Auto if path.extension().is_some_and(|e| e == "json") => InputFormat::Json,
            InputFormat::Auto if is_conll(path) => InputFormat::Conll,
            InputFormat::Auto => InputFormat::Text,
            f => f,
        };
        match format {
            InputFormat::Text | InputFormat::Auto => units.push(Unit {
                doc: Document::new(stem(path), read_input(path)?, language),
                spans: None,
            }),
            InputFormat::Json => {
                for d in read_json_file(path)? {
                    units.push(Unit {
                        doc: d.document(language),
                        spans: args.use_spans.then_some(d.spans),
                    });
                }
            }
            InputFormat::Conll => {
                for (i, r) in read_conll_file(path, Repair::Relaxed)?.iter().enumerate() {
                    let fallback = format!("{}-{i}", stem(path));
                    let d = conll::record_to_annotated(r, &fallback, Repair::Relaxed, None, Source::Gold)
                        .with_context(|| format!("{}: record {i}", path.display()))?;
                    units.push(Unit {
                        doc: d.document(language),
                        spans: args.use_spans.then_some(d.spans),
                    });
                }
            }
        }
    }
    Ok(units)
}

pub fn deid(mut cfg: EngineConfig, args: DeidArgs) -> Result<ExitCode> {
    args.engine.apply(&mut cfg);
    if args.rule_only {
        cfg.rule_only = Some(true);
    }
    if let Some(m) = args.mode {
        cfg.mode = Some(m);
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(m) = args.merge {
        cfg.merge = Some(m);
    }
    if let Some(f) = &args.mask_format {
        cfg.mask_format = Some(f.clone());
    }
    if let Some(p) = &args.fake_table {
        cfg.fake_table = Some(p.clone());
    }
    if let Some(a) = args.age_over_89 {
        cfg.age_over_89 = Some(a.into());
    }
    cfg.validate()?;

    let labels = cfg.label_set()?;
    let rules = cfg.rule_set(&labels)?;
    let splitter = cfg.splitter()?;
    let mode = cfg.rewrite_mode()?;
    let table = if cfg.mode == Some(Mode::Obfuscate) {
        cfg.fake_table()?
    } else {
        FakeChunkTable::default_table()
    };
    let rule_only = cfg.rule_only.unwrap_or(false);
    let client = if rule_only { None } else { cfg.backend(&labels)? };
    let needs_detection = !(args.use_spans && args.input_format != InputFormat::Text);
    if !rule_only && client.is_none() && needs_detection {
        bail!("no model backend configured; pass --rule-only or configure one");
    }
    let detector = Detector {
        labels: &labels,
        rules: &rules,
        splitter: splitter.as_ref(),
        backend: client.as_ref().map(|c| c as &dyn ModelBackend),
        rule_only,
        merge: cfg.merge.unwrap_or_default(),
    };
    let language = cfg.language();

    let stdin_mode = args.inputs.is_empty() || args.inputs.iter().all(|p| p == Path::new("-"));
    if stdin_mode {
        let doc = Document::new("stdin", read_input(Path::new("-"))?, language.as_str());
        let spans = detector.detect(&doc)?;
        let out = rewrite_document(&doc, spans, &mode, &table)?;
        if let Some(p) = &args.audit {
            write_json(p, &audit_file(&out, &mode))?;
        }
        if !out.leaks.is_empty() {
            error!("stdin: {} leaked chunk occurrence(s); output withheld", out.leaks.len());
            return Ok(ExitCode::from(EXIT_LEAK));
        }
        io::stdout().write_all(out.text.as_bytes())?;
        return Ok(ExitCode::SUCCESS);
    }

    let out_dir = args.out_dir.clone().context("--out-dir is required for file inputs")?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let units = deid_units(&args, &language)?;
    info!("de-identifying {} document(s) with {} worker(s)", units.len(), args.jobs);

    let process = |u: &Unit| -> Result<DeidOutput> {
        let spans = match &u.spans {
            Some(s) => s.clone(),
            None => detector.detect(&u.doc)?,
        };
        Ok(rewrite_document(&u.doc, spans, &mode, &table)?)
    };
    let pool = thread_pool(args.jobs)?;
    // Results stay in input order regardless of scheduling.
    let results: Vec<Result<DeidOutput>> = if args.fail_fast {
        let all = pool.install(|| units.par_iter().map(&process).collect::<Result<Vec<_>>>());
        all.map_err(|e| e.context("stopping at first failure (--fail-fast)"))?
            .into_iter()
            .map(Ok)
            .collect()
    } else {
        pool.install(|| units.par_iter().map(&process).collect())
    };

    let (mut failed, mut leaked) = (0usize, 0usize);
    for (u, r) in units.iter().zip(results) {
        let id = u.doc.doc_id();
        let out = match r {
            Ok(o) => o,
            Err(e) => {
                error!("{id}: {e:#}");
                failed += 1;
                continue;
            }
        };
        write_json(&out_dir.join(format!("{id}.audit.json")), &audit_file(&out, &mode))?;
        if !out.leaks.is_empty() {
            error!("{id}: {} leaked chunk occurrence(s); output withheld", out.leaks.len());
            leaked += 1;
            continue;
        }
        fs::write(out_dir.join(format!("{id}.deid.txt")), &out.text)?;
        if args.write_surrogates {
            if let Some(map) = &out.surrogates {
                warn!("{id}: writing surrogate map; it re-identifies the document");
                write_json(&out_dir.join(format!("{id}.surrogates.json")), map)?;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} document(s) failed", units.len());
    }
    Ok(if leaked > 0 { ExitCode::from(EXIT_LEAK) } else { ExitCode::SUCCESS })
}

// ---------------------------------------------------------------- eval

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    if let Some(table) = &args.aggregate_only {
        let f = File::open(table).with_context(|| format!("opening {}", table.display()))?;
        let rows = eval::read_f1_table(f).with_context(|| format!("{}", table.display()))?;
        let avg = eval::aggregate_macro(rows.iter().map(|(_, f1)| *f1))?;
        println!("macro-avg F1 over {} labels: {:.3}", rows.len(), eval::round_half_up(avg, 3));
        return Ok(ExitCode::SUCCESS);
    }
    let gold = args.gold.as_deref().context("--gold is required")?;
    let pred = args.pred.as_deref().context("--pred is required")?;
    match args.mode {
        EvalMode::Chunk => {
            let labels = args.labels.as_deref().map(LabelSet::resolve).transpose()?;
            let g = read_annotated(gold, None, Source::Gold)?;
            let p = read_annotated(pred, None, Source::Model)?;
            let matching = if args.lenient {
                ChunkMatching::LenientOverlap
            } else {
                ChunkMatching::Strict
            };
            let report = eval::evaluate_chunks_with(&g, &p, labels.as_ref(), matching)?;
            print!("{}", eval::format_chunk_table(&report));
            if let Some(path) = &args.json_out {
                write_json(path, &report)?;
            }
            if let Some(path) = &args.csv_out {
                let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                eval::write_chunk_csv(&report, f)?;
            }
        }
        EvalMode::Token => {
            let g = read_conll_file(gold, Repair::Relaxed)?;
            let p = read_conll_file(pred, Repair::Relaxed)?;
            let report = eval::evaluate_tokens(&g, &p)?;
            print!("{}", eval::format_token_table(&report));
            if let Some(path) = &args.json_out {
                write_json(path, &report)?;
            }
            if let Some(path) = &args.csv_out {
                let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
                eval::write_token_csv(&report, f)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- augment

pub fn augment(mut cfg: EngineConfig, args: AugmentArgs) -> Result<ExitCode> {
    if let Some(l) = &args.language {
        cfg.language = Some(l.clone());
    }
    if let Some(l) = &args.labels {
        cfg.labels = Some(l.clone());
    }
    let labels = cfg.label_set()?;
    let seed = args.seed.or(cfg.seed).context("augmentation needs a seed (--seed)")?;
    let records = read_conll_file(&args.corpus, Repair::Relaxed)?;

    let targets: BTreeSet<String> = if args.targets.is_empty() {
        augment::preset_targets(&labels)
    } else {
        args.targets.iter().map(|t| t.trim().to_string()).collect()
    };
    for t in &targets {
        if !labels.contains(t) {
            bail!("target label {t:?} is not in label set {labels}");
        }
    }
    let table = if args.originals_only {
        // Non-target spans are refilled too, so every label needs a template.
        FakeChunkTable::originals_only(&labels.all_labels().collect::<Vec<_>>())
    } else {
        match args.fake_table.as_ref().or(cfg.fake_table.as_ref()) {
            Some(p) => FakeChunkTable::from_path(p)?,
            None => FakeChunkTable::default_table(),
        }
    };
    let missing: Vec<&String> = targets.iter().filter(|t| !table.covers(t)).collect();
    if !missing.is_empty() {
        bail!("fake-chunk table has no template for {missing:?}");
    }
    let translator: Box<dyn TranslatorPlugin> = match args.translator {
        TranslatorKind::Identity => Box::new(IdentityTranslator),
        TranslatorKind::External => {
            let cmd = args.translator_cmd.as_deref().context("--translator-cmd is required")?;
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().context("--translator-cmd is empty")?;
            Box::new(ExternalTranslator {
                program,
                args: parts.collect(),
                ndjson: args.ndjson,
            })
        }
    };

    let pool = thread_pool(args.jobs)?;
    let generated = pool.install(|| augment::augment_corpus(&records, &targets, translator.as_ref(), &table, seed))?;
    let n_new: usize = generated.iter().map(|r| r.sentences.len()).sum();
    info!("generated {n_new} sentence(s) for targets {targets:?}");

    let mut out_records = Vec::new();
    if args.append {
        out_records.extend(records);
    }
    out_records.extend(generated);
    let text = conll::write_conll_string(&out_records)?;
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- parse-llm

#[derive(Serialize)]
struct DocDiagnostics {
    doc_id: String,
    alignment_score: f64,
    diagnostics: Vec<markup::Diagnostic>,
}

fn marked_path(original: &Path, args: &ParseLlmArgs) -> PathBuf {
    let dir = args
        .marked_dir
        .clone()
        .or_else(|| original.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    dir.join(format!("{}.marked.txt", stem(original)))
}

pub fn parse_llm(mut cfg: EngineConfig, args: ParseLlmArgs) -> Result<ExitCode> {
    if let Some(l) = &args.language {
        cfg.language = Some(l.clone());
    }
    if let Some(l) = &args.labels {
        cfg.labels = Some(l.clone());
    }
    if args.originals.is_empty() {
        bail!("no original notes given");
    }
    if args.marked.is_some() && args.originals.len() != 1 {
        bail!("--marked takes exactly one original; use --marked-dir for several");
    }
    let labels = cfg.label_set()?;
    let language = cfg.language();

    let mut docs = Vec::new();
    let mut diags = Vec::new();
    for original in &args.originals {
        let doc = Document::new(stem(original), read_input(original)?, language.as_str());
        let mpath = args.marked.clone().unwrap_or_else(|| marked_path(original, &args));
        let marked = read_input(&mpath)?;
        let parsed = markup::parse_markup(&doc, &marked, &labels);
        if !parsed.diagnostics.is_empty() {
            warn!("{}: {} diagnostic(s)", doc.doc_id(), parsed.diagnostics.len());
        }
        docs.push(AnnotatedDocument {
            doc_id: doc.doc_id().to_string(),
            text: doc.text().to_string(),
            spans: parsed.spans,
        });
        diags.push(DocDiagnostics {
            doc_id: doc.doc_id().to_string(),
            alignment_score: parsed.alignment_score,
            diagnostics: parsed.diagnostics,
        });
    }

    match &args.out {
        Some(p) => write_json(p, &docs)?,
        None => {
            let mut out = io::stdout().lock();
            conll::write_annotations(&docs, &mut out)?;
            out.write_all(b"\n")?;
        }
    }
    let diag_path = args.diagnostics.clone().or_else(|| {
        args.out
            .as_ref()
            .map(|p| p.with_file_name(format!("{}.diagnostics.json", stem(p))))
    });
    match diag_path {
        Some(p) => write_json(&p, &diags)?,
        None => {
            for d in &diags {
                for x in &d.diagnostics {
                    warn!("{}: {:?} at {}: {}", d.doc_id, x.kind, x.location, x.detail);
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- prompt / tokenize

pub fn prompt(mut cfg: EngineConfig, args: PromptArgs) -> Result<ExitCode> {
    if let Some(l) = &args.language {
        cfg.language = Some(l.clone());
    }
    if let Some(l) = &args.labels {
        cfg.labels = Some(l.clone());
    }
    let labels = cfg.label_set()?;
    let doc = Document::new(stem(&args.note), read_input(&args.note)?, cfg.language());
    print!("{}", markup::build_prompt(&doc, &labels));
    Ok(ExitCode::SUCCESS)
}

pub fn tokenize(cfg: EngineConfig, args: TokenizeArgs) -> Result<ExitCode> {
    let text = match (&args.text, &args.file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => read_input(p)?,
        (None, None) => read_input(Path::new("-"))?,
    };
    let mut out = io::stdout().lock();
    if args.sentences {
        let language = args.language.clone().unwrap_or_else(|| cfg.language());
        let splitter = RuleSplitter::for_language(&language);
        for s in split_sentences(&text, &splitter)? {
            serde_json::to_writer(&mut out, &s)?;
            out.write_all(b"\n")?;
        }
    } else {
        for t in word_punct_tokenize(&text) {
            serde_json::to_writer(&mut out, &t)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- healthcheck

pub fn healthcheck(mut cfg: EngineConfig, args: EngineArgs) -> Result<ExitCode> {
    args.apply(&mut cfg);
    let labels = cfg.label_set()?;
    let client = cfg.backend(&labels)?.context("no model backend configured")?;
    let info = client.healthcheck()?;
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(ExitCode::SUCCESS)
}
