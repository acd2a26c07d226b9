//! Acceptance checks: one PASS/FAIL line per criterion.
//!
//! Runs as its own harness (`cargo test --test acceptance`). A criterion
//! listed in `KNOWN_UNATTAINABLE` still runs in full and still prints FAIL;
//! it just does not fail the process. The reasons are recorded in the
//! decisions ledger. Every other failure exits non-zero.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde::Deserialize;
use time::Duration;

mod common;
use common::date_oracle;

use deid_core::annotation::{bio_to_spans, is_non_overlapping, spans_to_bio, Document, EntitySpan, Repair, Sentence, Source, Tag};
use deid_core::augment::{augment_corpus, preset_targets, FakeChunkTable, IdentityTranslator};
use deid_core::conll::{read_annotations, read_conll, write_conll_string, AnnotatedDocument, ConllRecord, ConllSentence};
use deid_core::dates::shift_date_text;
use deid_core::eval::{aggregate_macro, evaluate_chunks, f1_score, read_f1_table, round_half_up};
use deid_core::markup::{build_prompt, parse_markup};
use deid_core::pipeline::{normalize_chunk, rewrite_document, AgeOver89Policy, RewriteMode, DEFAULT_MASK_FORMAT};
use deid_core::rules::{RulePattern, RuleSet};
use deid_core::{word_punct_tokenize, LabelSet};

const KNOWN_UNATTAINABLE: &[&str] = &["F1 arithmetic vs token-level table"];

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn read(p: impl AsRef<Path>) -> String {
    let p = fixtures().join(p);
    std::fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_prop<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

// ------------------------------------------------------------------ 1

fn aggregation() -> Outcome {
    let expected = [
        ("en", 0.931),
        ("de", 0.960),
        ("it", 0.955),
        ("fr", 0.937),
        ("tr", 0.963),
        ("es", 0.957),
        ("ro", 0.930),
        ("ar", 0.922),
    ];
    let mut detail = Vec::new();
    for (lang, want) in expected {
        let rows = read_f1_table(read(format!("published/{lang}_f1.csv")).as_bytes()).map_err(|e| e.to_string())?;
        let got = round_half_up(aggregate_macro(rows.iter().map(|r| r.1)).map_err(|e| e.to_string())?, 3);
        ensure((got - want).abs() <= 0.001 + 1e-9, || format!("{lang}: {got:.3} != {want:.3}"))?;
        detail.push(format!("{lang} {got:.3}/{}", rows.len()));
    }
    Ok(detail.join(", "))
}

// ------------------------------------------------------------------ 2

fn token_table_f1() -> Outcome {
    #[derive(Deserialize)]
    struct Row {
        tag: String,
        precision: f64,
        recall: f64,
        f1: f64,
    }
    let src = read("published/en_token_prf.csv");
    let mut rdr = csv::Reader::from_reader(src.as_bytes());
    let rows: Vec<Row> = rdr.deserialize().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(rows.len() == 35, || format!("{} rows", rows.len()))?;
    for (tag, want) in [("B-AGE", 0.791), ("B-ZIP", 0.997), ("B-CITY", 0.925)] {
        let r = rows.iter().find(|r| r.tag == tag).ok_or(format!("no row {tag}"))?;
        let f = f1_score(r.precision, r.recall);
        ensure((f - want).abs() <= 0.005, || format!("spot row {tag}: {f:.4} vs {want}"))?;
    }
    let bad: Vec<String> = rows
        .iter()
        .filter_map(|r| {
            let f = f1_score(r.precision, r.recall);
            ((f - r.f1).abs() > 0.005).then(|| format!("{} computed {f:.4} listed {}", r.tag, r.f1))
        })
        .collect();
    if bad.is_empty() {
        Ok(format!("{} rows within 0.005", rows.len()))
    } else {
        Err(format!("{} of {} rows outside 0.005: {}", bad.len(), rows.len(), bad.join("; ")))
    }
}

// ------------------------------------------------------------------ 3

fn markup_conformance() -> Outcome {
    let original = read("markup_original.txt");
    let marked = read("markup_marked.txt");
    let ls = LabelSet::english();
    let doc = Document::new("example", original.as_str(), "en");
    let parsed = parse_markup(&doc, &marked, &ls);
    let want = [
        ("PATIENT", "Linda Martinez"),
        ("AGE", "45"),
        ("PROFESSION", "architect"),
        ("MEDICAL RECORD", "2775283"),
        ("DATE", "2023-05-10"),
        ("DEVICE", "ZX900"),
        ("DOCTOR", "Michael Brown"),
        ("DATE", "1990s"),
        ("IDNUM", "MF381/1183"),
        ("DATE", "20/10/2023"),
    ];
    ensure(parsed.spans.len() == want.len(), || format!("{} spans", parsed.spans.len()))?;
    let chars: Vec<char> = original.chars().collect();
    let mut search_from = 0;
    for (s, (label, chunk)) in parsed.spans.iter().zip(want) {
        ensure(s.label == label, || format!("label {} != {label}", s.label))?;
        let at: String = chars[s.start..s.end].iter().collect();
        ensure(at == chunk, || format!("{label}: offsets give {at:?}, want {chunk:?}"))?;
        // Independent check: the chunk's next occurrence in the original.
        let byte = original[search_from..].find(chunk).ok_or(format!("{chunk:?} not in original"))? + search_from;
        ensure(original[..byte].chars().count() == s.start, || format!("{chunk:?} start mismatch"))?;
        search_from = byte + chunk.len();
    }
    let prompt = build_prompt(&Document::new("n", "NOTE BODY", "en"), &ls);
    let lines: Vec<String> = read("prompt_instruction_lines.txt")
        .lines()
        .chain(read("prompt_entity_lines.txt").lines())
        .map(str::to_string)
        .collect::<Vec<_>>();
    for l in &lines {
        ensure(prompt.lines().any(|p| p == l), || format!("prompt lacks line {l:?}"))?;
    }
    ensure(prompt.contains("BEGINER_ LABEL CHUNK ENDNER"), || "instruction marker missing".into())?;
    Ok(format!("10 entities, {} prompt lines verbatim", lines.len()))
}

// ------------------------------------------------------------------ 4

#[derive(Default, Clone, Copy, PartialEq, Debug)]
struct Tally {
    tp: usize,
    fp: usize,
    fn_: usize,
}

fn eval_oracle(gold: &[AnnotatedDocument], pred: &[AnnotatedDocument]) -> BTreeMap<String, Tally> {
    let mut golds: Vec<(String, String, usize, usize)> = Vec::new();
    for d in gold {
        for s in &d.spans {
            let k = (d.doc_id.clone(), s.label.clone(), s.start, s.end);
            if !golds.contains(&k) {
                golds.push(k);
            }
        }
    }
    let mut used = vec![false; golds.len()];
    let mut out: BTreeMap<String, Tally> = BTreeMap::new();
    for d in pred {
        for s in &d.spans {
            let hit = (0..golds.len()).find(|&i| {
                !used[i] && golds[i].0 == d.doc_id && golds[i].1 == s.label && golds[i].2 == s.start && golds[i].3 == s.end
            });
            let t = out.entry(s.label.clone()).or_default();
            match hit {
                Some(i) => {
                    used[i] = true;
                    t.tp += 1;
                }
                None => t.fp += 1,
            }
        }
    }
    for (g, u) in golds.iter().zip(used) {
        if !u {
            out.entry(g.1.clone()).or_default().fn_ += 1;
        }
    }
    out
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn evaluator_equivalence() -> Outcome {
    let span = (prop::sample::select(vec!["DATE", "PATIENT", "AGE", "CITY"]), 0usize..15, 1usize..4)
        .prop_map(|(l, s, n)| EntitySpan::new(l, s, s + n, Source::Gold));
    let doc_pair = (prop::collection::vec(span.clone(), 0..=20), prop::collection::vec(span, 0..=20), prop::collection::vec(any::<bool>(), 20));
    let strategy = prop::collection::vec(doc_pair, 1..3).prop_map(|docs| {
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for (i, (g, noise, keep)) in docs.into_iter().enumerate() {
            let mut p: Vec<EntitySpan> = g.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s.clone()).collect();
            p.extend(noise.into_iter().take(6));
            let id = format!("d{i}");
            gold.push(AnnotatedDocument { doc_id: id.clone(), text: String::new(), spans: g });
            pred.push(AnnotatedDocument { doc_id: id, text: String::new(), spans: p });
        }
        (gold, pred)
    });
    run_prop(1000, strategy, |(gold, pred)| {
        let r = evaluate_chunks(&gold, &pred, None).unwrap();
        let o = eval_oracle(&gold, &pred);
        prop_assert_eq!(r.per_label.keys().collect::<Vec<_>>(), o.keys().collect::<Vec<_>>());
        let (mut pooled, mut f_sum) = (Tally::default(), 0.0);
        for (l, t) in &o {
            let s = &r.per_label[l];
            prop_assert_eq!((s.tp, s.fp, s.fn_), (t.tp, t.fp, t.fn_));
            let (p, rc) = (ratio(t.tp, t.tp + t.fp), ratio(t.tp, t.tp + t.fn_));
            let f = ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn_);
            prop_assert!((s.precision - p).abs() < 1e-12 && (s.recall - rc).abs() < 1e-12 && (s.f1 - f).abs() < 1e-12);
            f_sum += f;
            pooled.tp += t.tp;
            pooled.fp += t.fp;
            pooled.fn_ += t.fn_;
        }
        let macro_f = if o.is_empty() { 0.0 } else { f_sum / o.len() as f64 };
        prop_assert!((r.macro_avg_f1 - macro_f).abs() < 1e-12);
        let micro = ratio(2 * pooled.tp, 2 * pooled.tp + pooled.fp + pooled.fn_);
        prop_assert!((r.micro_avg_f1 - micro).abs() < 1e-12);
        Ok(())
    })?;
    let gold = vec![AnnotatedDocument {
        doc_id: "a".into(),
        text: String::new(),
        spans: vec![EntitySpan::new("PATIENT", 10, 24, Source::Gold)],
    }];
    for (name, (l, s, e)) in [
        ("off-by-one start", ("PATIENT", 11, 24)),
        ("off-by-one end", ("PATIENT", 10, 25)),
        ("wrong label", ("DOCTOR", 10, 24)),
        ("substring", ("PATIENT", 12, 20)),
    ] {
        let pred = vec![AnnotatedDocument {
            doc_id: "a".into(),
            text: String::new(),
            spans: vec![EntitySpan::new(l, s, e, Source::Model)],
        }];
        let r = evaluate_chunks(&gold, &pred, None).map_err(|e| e.to_string())?;
        ensure(r.per_label.values().all(|c| c.tp == 0), || format!("probe {name} scored a TP"))?;
    }
    Ok("1000 random corpora match the oracle; 4 probes never TP".into())
}

// ------------------------------------------------------------------ 5

#[derive(Deserialize)]
struct Sample {
    lang: String,
    text: String,
}

#[derive(Deserialize)]
struct Samples {
    sample: Vec<Sample>,
}

fn token_sentence() -> impl Strategy<Value = (Sentence, Vec<EntitySpan>)> {
    let word = prop::sample::select(vec!["Linda", "Müller", "ş", "2089", "-", "/", ".", "MR", "#:", "日本", "x_y"]);
    (prop::collection::vec(word, 1..25), prop::collection::vec((0u8..4, 1usize..4), 25)).prop_map(|(words, plan)| {
        let text = words.join(" ");
        let sentence = Sentence::from_tokens(word_punct_tokenize(&text));
        let labels = ["PATIENT", "DATE", "MEDICAL RECORD"];
        let mut spans = Vec::new();
        let mut i = 0;
        let mut k = 0;
        while i < sentence.tokens.len() {
            let (choice, len) = plan[k % plan.len()];
            k += 1;
            if choice < 3 {
                let end = (i + len).min(sentence.tokens.len());
                let s = &sentence.tokens;
                spans.push(EntitySpan::new(labels[choice as usize], s[i].start, s[end - 1].end, Source::Gold));
                i = end;
            } else {
                i += 1;
            }
        }
        (sentence, spans)
    })
}

fn conll_records() -> impl Strategy<Value = Vec<ConllRecord>> {
    let token = prop::sample::select(vec!["a", "Bob", "12", ".", "-DOCSTART", "ü", "#", "x,y"]);
    let tagged = (token, 0u8..3, prop::sample::select(vec!["DATE", "PATIENT", "MEDICAL RECORD"]));
    let sentence = prop::collection::vec(tagged, 1..10).prop_map(|v| {
        let mut tags: Vec<Tag> = Vec::new();
        for (_, t, l) in &v {
            let prev_label = tags.last().and_then(|t: &Tag| t.label().map(str::to_string));
            tags.push(match t {
                0 => Tag::O,
                1 if prev_label.as_deref() == Some(*l) => Tag::I(l.to_string()),
                _ => Tag::B(l.to_string()),
            });
        }
        ConllSentence {
            tokens: v.iter().map(|(w, _, _)| w.to_string()).collect(),
            tags,
        }
    });
    prop::collection::vec(prop::collection::vec(sentence, 1..4), 1..4).prop_map(|recs| {
        recs.into_iter()
            .enumerate()
            .map(|(i, sentences)| ConllRecord { doc_id: Some(format!("doc-{i}")), sentences })
            .collect()
    })
}

fn round_trips() -> Outcome {
    let ls = LabelSet::english();
    run_prop(1000, token_sentence(), |(sentence, spans)| {
        let tags = spans_to_bio(&sentence, &spans).unwrap();
        let back = bio_to_spans(&sentence, &tags, Repair::Strict, Some(&ls), Source::Gold).unwrap();
        prop_assert_eq!(back, spans);
        Ok(())
    })?;
    run_prop(500, conll_records(), |recs| {
        let text = write_conll_string(&recs).unwrap();
        let back = read_conll(text.as_bytes(), Repair::Strict).unwrap();
        prop_assert_eq!(&back, &recs);
        prop_assert_eq!(write_conll_string(&back).unwrap(), text);
        Ok(())
    })?;
    let samples: Samples = toml::from_str(&read("tokenizer_samples.toml")).map_err(|e| e.to_string())?;
    let langs: BTreeSet<&str> = samples.sample.iter().map(|s| s.lang.as_str()).collect();
    for l in ["en", "de", "tr", "ar", "ro"] {
        ensure(langs.contains(l), || format!("no {l} sample"))?;
    }
    for s in &samples.sample {
        let toks = word_punct_tokenize(&s.text);
        let chars: Vec<char> = s.text.chars().collect();
        let mut rebuilt = String::new();
        let mut pos = 0;
        for t in &toks {
            ensure(chars[pos..t.start].iter().all(|c| c.is_whitespace()), || format!("[{}] gap not whitespace", s.lang))?;
            rebuilt.extend(&chars[pos..t.start]);
            rebuilt.push_str(&t.text);
            pos = t.end;
        }
        rebuilt.extend(&chars[pos..]);
        ensure(rebuilt == s.text, || format!("[{}] reconstruction failed", s.lang))?;
    }
    Ok(format!("1000 span/BIO, 500 CoNLL, {} tokenizer samples", samples.sample.len()))
}

// ------------------------------------------------------------------ 6

fn augmentation() -> Outcome {
    let src = read("augment/corpus_en.conll");
    let corpus = read_conll(src.as_bytes(), Repair::Strict).map_err(|e| e.to_string())?;
    let n: usize = corpus.iter().map(|r| r.sentences.len()).sum();
    ensure(n == 50, || format!("{n} sentences"))?;
    let counts = |recs: &[ConllRecord]| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for t in recs.iter().flat_map(|r| &r.sentences).flat_map(|s| &s.tags) {
            if let Tag::B(l) = t {
                *m.entry(l.clone()).or_default() += 1;
            }
        }
        m
    };
    let targets = preset_targets(&LabelSet::english());
    let table = FakeChunkTable::default_table();
    let run = |seed| augment_corpus(&corpus, &targets, &IdentityTranslator, &table, seed).map_err(|e| e.to_string());
    let a = run(17)?;
    ensure(counts(&a) == counts(&corpus), || format!("counts {:?} vs {:?}", counts(&a), counts(&corpus)))?;
    let bytes = write_conll_string(&a).map_err(|e| e.to_string())?;
    ensure(bytes == write_conll_string(&run(17)?).map_err(|e| e.to_string())?, || "seeded runs differ".into())?;
    let labels: Vec<String> = counts(&corpus).into_keys().collect();
    let same = augment_corpus(&corpus, &targets, &IdentityTranslator, &FakeChunkTable::originals_only(&labels), 17)
        .map_err(|e| e.to_string())?;
    ensure(write_conll_string(&same).map_err(|e| e.to_string())? == src, || "originals-only output differs".into())?;
    Ok(format!("{} labels conserved over {n} sentences; byte-identical", labels.len()))
}

// ------------------------------------------------------------------ 7

fn deid_safety() -> Outcome {
    let docs = read_annotations(read("notes/notes.json").as_bytes()).map_err(|e| e.to_string())?;
    let table = FakeChunkTable::default_table();
    let mut modes = vec![RewriteMode::Mask { format: DEFAULT_MASK_FORMAT.into() }];
    modes.extend((0..5).map(|seed| RewriteMode::Obfuscate { seed, age_over_89: AgeOver89Policy::Keep }));
    let mut rewrites = 0;
    for d in &docs {
        let doc = d.document("en");
        for mode in &modes {
            let out = rewrite_document(&doc, d.spans.clone(), mode, &table).map_err(|e| format!("{}: {e}", d.doc_id))?;
            ensure(out.leaks.is_empty(), || format!("{}: leaks {:?}", d.doc_id, out.leaks))?;
            ensure(out.audit.len() == d.spans.len(), || format!("{}: audit size", d.doc_id))?;
            rewrites += 1;
            // Mentions equal up to case and spacing share one replacement.
            let chars: Vec<char> = out.text.chars().collect();
            let mut seen: HashMap<(String, String), String> = HashMap::new();
            for a in &out.audit {
                let piece: String = chars[a.out_start..a.out_end].iter().collect();
                let key = (a.label.clone(), normalize_chunk(doc.slice(a.start, a.end).unwrap()));
                let prev = seen.entry(key.clone()).or_insert_with(|| piece.clone());
                ensure(*prev == piece, || format!("{}: {key:?} became {prev:?} and {piece:?}", d.doc_id))?;
            }
        }
    }
    run_prop(500, date_oracle::case(), |(d, f, shift)| {
        let text = date_oracle::render(d, &f);
        let want = date_oracle::render(d + Duration::days(shift), &date_oracle::effective(d, &f));
        prop_assert_eq!(shift_date_text(&text, shift), Some(want), "{}", text);
        Ok(())
    })?;
    Ok(format!("{} notes, {rewrites} rewrites leak-free and consistent; 500 dates match", docs.len()))
}

// ------------------------------------------------------------------ 8

#[derive(Deserialize)]
struct RuleCase {
    rule: String,
    text: String,
    expect: Vec<String>,
}

#[derive(Deserialize)]
struct RuleCases {
    case: Vec<RuleCase>,
}

fn key(p: &RulePattern) -> String {
    let v = p
        .validator
        .map(|v| serde_json::to_value(v).unwrap().as_str().unwrap().to_string())
        .unwrap_or_else(|| "-".into());
    format!("{}/{}", p.label, v)
}

fn rule_engine() -> Outcome {
    let ls = LabelSet::english();
    let rules = RuleSet::defaults(&ls);
    let cases: RuleCases = toml::from_str(&read("rule_cases.toml")).map_err(|e| e.to_string())?;
    let mut tally: BTreeMap<String, (usize, usize)> =
        RuleSet::default_patterns(&ls).iter().map(|p| (key(p), (0, 0))).collect();
    let found = |rs: &RuleSet, text: &str, label: &str| -> Vec<String> {
        let doc = Document::new("r", text, "en");
        rs.detect(&doc)
            .iter()
            .filter(|s| s.label == label)
            .map(|s| doc.span_text(s).unwrap().to_string())
            .collect()
    };
    for c in &cases.case {
        let t = tally.get_mut(&c.rule).ok_or(format!("unknown pattern {}", c.rule))?;
        if c.expect.is_empty() {
            t.1 += 1;
        } else {
            t.0 += 1;
        }
        let label = c.rule.split('/').next().unwrap();
        let got = found(&rules, &c.text, label);
        ensure(got == c.expect, || format!("{} on {:?}: {got:?}", c.rule, c.text))?;
    }
    for (k, (p, n)) in &tally {
        ensure(*p >= 5 && *n >= 5, || format!("{k}: {p} positive / {n} negative"))?;
    }
    let has_neg = |rule: &str, needle: &str| cases.case.iter().any(|c| c.rule == rule && c.expect.is_empty() && c.text.contains(needle));
    ensure(has_neg("SSN/ssn", "000-"), || "no SSN area-000 negative".into())?;
    ensure(cases.case.iter().any(|c| c.rule == "IP/ipv4" && c.expect.is_empty() && c.text.split(|ch: char| !ch.is_ascii_digit()).any(|o| o.parse::<u32>().is_ok_and(|v| v > 255))), || "no IPv4 octet-range negative".into())?;
    let fragments = vec![
        "SSN", "123-45-6789", "fax", "617-555-0199", "john@x.org", "https://a.example/c", "10.0.0.1", "2001:db8::1", "DL",
        "D1234567", "license", "acct", "4471-2290-55", "plate", "ABC 1234", "1HGCM82633A004352", "seen", ".", ",", "#",
    ];
    let text = prop::collection::vec((prop::sample::select(fragments), prop::sample::select(vec![" ", "", "\n"])), 0..40)
        .prop_map(|v| v.into_iter().map(|(a, b)| format!("{a}{b}")).collect::<String>());
    run_prop(500, text, |t| {
        let spans = rules.detect(&Document::new("p", t.as_str(), "en"));
        prop_assert!(is_non_overlapping(&spans));
        prop_assert!(spans.iter().all(|s| ls.is_rule_label(&s.label)));
        Ok(())
    })?;
    Ok(format!("{} patterns, {} cases; 500 random texts non-overlapping", tally.len(), cases.case.len()))
}

fn main() {
    let criteria: &[(&str, fn() -> Outcome)] = &[
        ("Aggregation reproduction", aggregation),
        ("F1 arithmetic vs token-level table", token_table_f1),
        ("Markup example conformance", markup_conformance),
        ("Evaluator oracle equivalence", evaluator_equivalence),
        ("Round-trip suite", round_trips),
        ("Augmentation conservation", augmentation),
        ("De-identification safety", deid_safety),
        ("Rule engine", rule_engine),
    ];
    let mut unexpected = 0;
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let ms = t.elapsed().as_millis();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({ms} ms): {detail}"),
            Err(detail) => {
                let known = KNOWN_UNATTAINABLE.contains(name);
                println!("FAIL  {name} ({ms} ms){}: {detail}", if known { " [known, see ledger]" } else { "" });
                if !known {
                    unexpected += 1;
                }
            }
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
