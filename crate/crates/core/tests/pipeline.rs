use std::cmp::Reverse;
use std::sync::Arc;

use proptest::prelude::*;

use deid_core::annotation::{is_non_overlapping, Document, EntitySpan, Source};
use deid_core::augment::FakeChunkTable;
use deid_core::backend::{BackendClient, MockTransport};
use deid_core::pipeline::{
    leak_check, mask, merge_spans, rewrite_document, AgeOver89Policy, Detector, MergeStrategy, PipelineError,
    RewriteMode, DEFAULT_MASK_FORMAT,
};
use deid_core::rules::RuleSet;
use deid_core::{LabelSet, RuleSplitter};

fn sp(l: &str, s: usize, e: usize, src: Source) -> EntitySpan {
    EntitySpan::new(l, s, e, src)
}

// ---------------------------------------------------------------- merge

/// Preference order restated per strategy, smaller first.
fn oracle_key(s: &EntitySpan, strategy: MergeStrategy, ls: &LabelSet) -> (u8, Reverse<usize>, u8, usize, usize, String, usize) {
    let is_rule = s.source == Source::Rule;
    let is_model = s.source == Source::Model || s.source == Source::Llm;
    let (a, c) = match strategy {
        MergeStrategy::RulePriority => (if is_rule { 0 } else { 1 }, 0),
        MergeStrategy::ModelPriority => (if is_model { 0 } else { 1 }, 0),
        MergeStrategy::Longest => (0, if is_rule { 0 } else { 1 }),
    };
    let rank = ls.priority().iter().position(|l| *l == s.label).unwrap_or(ls.priority().len());
    (a, Reverse(s.end - s.start), c, rank, s.start, s.label.clone(), s.end)
}

/// Quadratic greedy: walk spans best-first, keep those clear of every kept span.
fn merge_oracle(spans: &[EntitySpan], strategy: MergeStrategy, ls: &LabelSet) -> Vec<EntitySpan> {
    let mut order: Vec<&EntitySpan> = spans.iter().filter(|s| s.end > s.start).collect();
    order.sort_by_key(|s| oracle_key(s, strategy, ls));
    let mut kept: Vec<EntitySpan> = Vec::new();
    for s in order {
        if kept.iter().all(|k| k.end <= s.start || s.end <= k.start) {
            kept.push(s.clone());
        }
    }
    kept.sort_by_key(|s| s.start);
    kept
}

fn random_spans() -> impl Strategy<Value = Vec<EntitySpan>> {
    let label = prop::sample::select(vec!["SSN", "EMAIL", "IDNUM", "PATIENT", "DATE", "PHONE", "URL"]);
    let source = prop::sample::select(vec![Source::Rule, Source::Model, Source::Llm, Source::Gold]);
    prop::collection::vec(
        (label, source, 0usize..60, 0usize..12).prop_map(|(l, src, s, n)| sp(l, s, s + n, src)),
        0..25,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn merge_matches_greedy_oracle(spans in random_spans(), k in 0usize..3) {
        let ls = LabelSet::english();
        let strategy = [MergeStrategy::RulePriority, MergeStrategy::ModelPriority, MergeStrategy::Longest][k];
        let got = merge_spans(spans.clone(), strategy, &ls);
        prop_assert_eq!(&got, &merge_oracle(&spans, strategy, &ls));
        prop_assert!(is_non_overlapping(&got));
        // Every dropped span is blocked by a kept span that ranks ahead of it.
        for s in spans.iter().filter(|s| s.end > s.start && !got.contains(s)) {
            prop_assert!(got.iter().any(|k| k.overlaps(s)
                && oracle_key(k, strategy, &ls) <= oracle_key(s, strategy, &ls)));
        }
    }

    #[test]
    fn rule_spans_survive_rule_priority(spans in random_spans()) {
        let ls = LabelSet::english();
        let got = merge_spans(spans.clone(), MergeStrategy::RulePriority, &ls);
        // A rule span can only be displaced by another rule span.
        for s in spans.iter().filter(|s| s.source == Source::Rule && s.end > s.start && !got.contains(s)) {
            prop_assert!(got.iter().any(|k| k.overlaps(s) && k.source == Source::Rule));
        }
    }
}

#[test]
fn ssn_beats_overlapping_idnum_under_rule_priority() {
    let ls = LabelSet::english();
    let model = sp("IDNUM", 0, 15, Source::Model);
    let rule = sp("SSN", 4, 15, Source::Rule);
    let out = merge_spans(vec![model.clone(), rule.clone()], MergeStrategy::RulePriority, &ls);
    assert_eq!(out, vec![rule.clone()]);
    let out = merge_spans(vec![model.clone(), rule], MergeStrategy::ModelPriority, &ls);
    assert_eq!(out, vec![model]);
}

// ---------------------------------------------------------------- detect

#[test]
fn detector_combines_rule_and_mock_model_spans() {
    let ls = LabelSet::english();
    let rules = RuleSet::defaults(&ls);
    let splitter = RuleSplitter::default();
    let client = BackendClient::new(Arc::new(MockTransport::new(ls.clone())), ls.clone());
    let det = Detector {
        labels: &ls,
        rules: &rules,
        splitter: &splitter,
        backend: Some(&client),
        rule_only: false,
        merge: MergeStrategy::RulePriority,
    };
    let text = "Contact Linda Martinez at linda.m@example.org today.";
    let doc = Document::new("n1", text, "en");
    let spans = det.detect(&doc).unwrap();
    let got: Vec<(&str, &str, Source)> = spans
        .iter()
        .map(|s| (s.label.as_str(), doc.span_text(s).unwrap(), s.source))
        .collect();
    assert_eq!(
        got,
        vec![
            ("PATIENT", "Linda Martinez", Source::Model),
            ("EMAIL", "linda.m@example.org", Source::Rule),
        ]
    );

    let rule_only = Detector { backend: None, rule_only: true, ..det };
    let spans = rule_only.detect(&doc).unwrap();
    assert_eq!(spans.len(), 1);
    assert_eq!(spans[0].label, "EMAIL");

    let missing = Detector { backend: None, rule_only: false, ..rule_only };
    assert!(matches!(missing.detect(&doc), Err(PipelineError::NoBackend)));
}

// ---------------------------------------------------------------- rewrite

#[test]
fn mask_example_and_audit_offsets() {
    let text = "Mrs. Linda Martinez, a 45 year-old architect";
    let doc = Document::new("d", text, "en");
    let spans = vec![
        sp("PATIENT", 5, 19, Source::Gold),
        sp("AGE", 23, 25, Source::Gold),
        sp("PROFESSION", 35, 44, Source::Gold),
    ];
    let table = FakeChunkTable::default_table();
    let out = rewrite_document(&doc, spans, &RewriteMode::Mask { format: DEFAULT_MASK_FORMAT.into() }, &table).unwrap();
    assert_eq!(out.text, "Mrs. [PATIENT], a [AGE] year-old [PROFESSION]");
    assert!(out.leaks.is_empty());
    let chars: Vec<char> = out.text.chars().collect();
    for a in &out.audit {
        let s: String = chars[a.out_start..a.out_end].iter().collect();
        assert_eq!(s, format!("[{}]", a.label));
    }
}

#[test]
fn adjacent_spans_are_rewritten_independently() {
    let doc = Document::new("d", "Linda Martinez05/10/2023", "en");
    let spans = [sp("PATIENT", 0, 14, Source::Gold), sp("DATE", 14, 24, Source::Gold)];
    let (text, audit) = mask(&doc, &spans, DEFAULT_MASK_FORMAT).unwrap();
    assert_eq!(text, "[PATIENT][DATE]");
    assert_eq!(audit[0].out_end, audit[1].out_start);
}

#[test]
fn overlapping_or_out_of_range_spans_are_rejected() {
    let doc = Document::new("d", "abcdef", "en");
    for spans in [
        vec![sp("A", 0, 3, Source::Gold), sp("B", 2, 4, Source::Gold)],
        vec![sp("A", 4, 9, Source::Gold)],
    ] {
        assert!(matches!(mask(&doc, &spans, "[{label}]"), Err(PipelineError::InvalidSpans(_))));
    }
}

fn obfuscate_mode(seed: u64) -> RewriteMode {
    RewriteMode::Obfuscate {
        seed,
        age_over_89: AgeOver89Policy::Keep,
    }
}

const NOTE: &str = "Linda Martinez (45) was seen in Boston on 03/29/2089. Dr. Michael Brown called linda martinez at 617-555-0199.";

fn note_spans() -> Vec<EntitySpan> {
    vec![
        sp("PATIENT", 0, 14, Source::Gold),
        sp("AGE", 16, 18, Source::Gold),
        sp("CITY", 32, 38, Source::Gold),
        sp("DATE", 42, 52, Source::Gold),
        sp("DOCTOR", 58, 71, Source::Gold),
        sp("PATIENT", 79, 93, Source::Gold),
        sp("PHONE", 97, 109, Source::Gold),
    ]
}

#[test]
fn obfuscation_is_consistent_deterministic_and_leak_free() {
    let doc = Document::new("note-1", NOTE, "en");
    let table = FakeChunkTable::default_table();
    let a = rewrite_document(&doc, note_spans(), &obfuscate_mode(42), &table).unwrap();
    let b = rewrite_document(&doc, note_spans(), &obfuscate_mode(42), &table).unwrap();
    assert_eq!(a.text, b.text);
    assert!(a.leaks.is_empty(), "{:?}", a.leaks);

    let chars: Vec<char> = a.text.chars().collect();
    let piece = |i: usize| -> String { chars[a.audit[i].out_start..a.audit[i].out_end].iter().collect() };
    // Both mentions of the patient (differing in case) share one surrogate.
    assert_eq!(piece(0), piece(5));
    let map = a.surrogates.as_ref().unwrap();
    assert_eq!(map.entries.iter().filter(|e| e.label == "PATIENT").count(), 1);

    // The date moved by the recorded shift and kept its format.
    let shift = map.date_shift_days;
    assert!((30..=365).contains(&shift.abs()));
    let d = piece(3);
    assert_eq!(d, deid_core::dates::shift_date_text("03/29/2089", shift).unwrap());

    // Age stays in its decade.
    let age: u32 = piece(1).parse().unwrap();
    assert!((40..50).contains(&age) && age != 45);

    let other = rewrite_document(&doc, note_spans(), &obfuscate_mode(43), &table).unwrap();
    assert_ne!(a.text, other.text);
    let other_doc = Document::new("note-2", NOTE, "en");
    let other = rewrite_document(&other_doc, note_spans(), &obfuscate_mode(42), &table).unwrap();
    assert_ne!(a.text, other.text);
}

#[test]
fn forced_collision_is_redrawn_and_exhaustion_falls_back_to_label() {
    let doc = Document::new("d", "born in Boston", "en");
    let spans = vec![sp("CITY", 8, 14, Source::Gold)];
    let table = FakeChunkTable::from_toml_str(
        "[labels]\nCITY = [{ original = true }, { original = true }, { literal = \"Riverton\" }]\n",
    )
    .unwrap();
    for seed in 0..20 {
        let out = rewrite_document(&doc, spans.clone(), &obfuscate_mode(seed), &table).unwrap();
        assert_eq!(out.text, "born in Riverton");
        assert!(out.leaks.is_empty());
    }
    let only_original = FakeChunkTable::originals_only(&["CITY"]);
    let out = rewrite_document(&doc, spans, &obfuscate_mode(0), &only_original).unwrap();
    assert_eq!(out.text, "born in [CITY]");
    assert!(out.leaks.is_empty());
}

#[test]
fn unspanned_mention_is_reported_as_leak() {
    // The second mention is not covered by a span.
    let doc = Document::new("d", "Linda Martinez called. Linda Martinez left.", "en");
    let spans = vec![sp("PATIENT", 0, 14, Source::Gold)];
    let table = FakeChunkTable::default_table();
    let out = rewrite_document(&doc, spans, &RewriteMode::Mask { format: DEFAULT_MASK_FORMAT.into() }, &table).unwrap();
    assert_eq!(out.leaks.len(), 1);
    assert_eq!(out.leaks[0].chunk, "Linda Martinez");
    let leaked: String = out.text.chars().skip(out.leaks[0].start).take(14).collect();
    assert_eq!(leaked, "Linda Martinez");
}

const NAMES: &[&str] = &["Linda Martinez", "John Smith", "Boston", "Mercy General", "nurse"];
const LABELS: &[&str] = &["PATIENT", "PATIENT", "CITY", "HOSPITAL", "PROFESSION"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// When every occurrence of every chunk is spanned, neither mode leaks,
    /// and text outside spans is copied verbatim.
    #[test]
    fn fully_spanned_documents_do_not_leak(picks in prop::collection::vec((0usize..5, 0usize..3), 1..12), seed in any::<u64>()) {
        let fillers = [" saw ", ", then ", " and "];
        let mut text = String::from("Note: ");
        let mut spans = Vec::new();
        for (n, f) in picks {
            let start = text.chars().count();
            text.push_str(NAMES[n]);
            spans.push(sp(LABELS[n], start, text.chars().count(), Source::Gold));
            text.push_str(fillers[f]);
        }
        let doc = Document::new("p", text.as_str(), "en");
        let table = FakeChunkTable::default_table();
        for mode in [RewriteMode::Mask { format: DEFAULT_MASK_FORMAT.into() }, obfuscate_mode(seed)] {
            let out = rewrite_document(&doc, spans.clone(), &mode, &table).unwrap();
            prop_assert!(out.leaks.is_empty(), "{:?} {}", out.leaks, out.text);
            prop_assert!(out.text.starts_with("Note: "));
            let out_chars: Vec<char> = out.text.chars().collect();
            let in_chars: Vec<char> = text.chars().collect();
            // Gaps between spans are byte-for-byte the originals.
            let mut o_pos = 0;
            let mut i_pos = 0;
            for a in &out.audit {
                prop_assert_eq!(&out_chars[o_pos..a.out_start], &in_chars[i_pos..a.start]);
                o_pos = a.out_end;
                i_pos = a.end;
            }
            prop_assert_eq!(&out_chars[o_pos..], &in_chars[i_pos..]);
            let originals: Vec<&str> = spans.iter().map(|s| doc.span_text(s).unwrap()).collect();
            let exclude: Vec<(usize, usize)> = match mode {
                RewriteMode::Mask { .. } => out.audit.iter().map(|a| (a.out_start, a.out_end)).collect(),
                _ => vec![],
            };
            prop_assert!(leak_check(&out.text, &originals, &exclude).is_empty());
        }
    }
}
