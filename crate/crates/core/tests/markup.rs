use deid_core::markup::{parse_markup, DiagnosticKind};
use deid_core::{Document, LabelSet};

const ORIGINAL: &str = include_str!("fixtures/markup_original.txt");
const MARKED: &str = include_str!("fixtures/markup_marked.txt");

fn extracted(doc: &Document, marked: &str) -> (Vec<(String, String)>, deid_core::markup::MarkupParse) {
    let p = parse_markup(doc, marked, &LabelSet::english());
    let v = p
        .spans
        .iter()
        .map(|s| (s.label.clone(), doc.span_text(s).unwrap().to_string()))
        .collect();
    (v, p)
}

#[test]
fn worked_example_recovers_all_chunks() {
    let doc = Document::new("ex", ORIGINAL, "en");
    let (got, p) = extracted(&doc, MARKED);
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
    let want: Vec<(String, String)> = want.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
    assert_eq!(got, want);
    // The marked copy drops one hyphen ("45-year-old" -> "45 year-old").
    assert!(p.alignment_score > 0.99 && p.alignment_score < 1.0);
    assert!(p.diagnostics.iter().all(|d| d.kind == DiagnosticKind::TextEdited));
}

#[test]
fn paraphrased_chunk_dropped_others_kept() {
    let original = "The patient Anna Weber was evaluated at Mercy General on 2021-03-04 for chest pain and shortness of breath.";
    let doc = Document::new("p", original, "en");
    let marked = "The patient BEGINER_PATIENT Anna Weber ENDNER was evaluated at BEGINER_HOSPITAL the county clinic ENDNER on BEGINER_DATE 2021-03-04 ENDNER for chest pain and shortness of breath.";
    let (got, p) = extracted(&doc, marked);
    assert_eq!(
        got,
        vec![
            ("PATIENT".to_string(), "Anna Weber".to_string()),
            ("DATE".to_string(), "2021-03-04".to_string())
        ]
    );
    assert!(p.diagnostics.iter().filter(|d| d.kind == DiagnosticKind::TextEdited).count() >= 2);
}

#[test]
fn unicode_offsets_are_code_points() {
    let original = "Patientin Jürgen Müßig, geb. 01.02.1960.";
    let doc = Document::new("u", original, "de");
    let ls = LabelSet::builtin("de").unwrap();
    let marked = "Patientin BEGINER_PATIENT Jürgen Müßig ENDNER, geb. BEGINER_DATE 01.02.1960 ENDNER.";
    let p = parse_markup(&doc, marked, &ls);
    assert_eq!(p.alignment_score, 1.0);
    let s = &p.spans[0];
    assert_eq!((s.start, s.end), (10, 22));
    assert_eq!(doc.span_text(s).unwrap(), "Jürgen Müßig");
}
