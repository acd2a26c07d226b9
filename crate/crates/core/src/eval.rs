//! Strict chunk-level and IOB token-level scoring.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::EntitySpan;
use crate::conll::{AnnotatedDocument, ConllRecord};
use crate::labels::LabelSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predictions reference unknown documents: {0:?}")]
    DocumentMismatch(Vec<String>),
    #[error("token counts differ: {detail}")]
    Alignment { detail: String },
    #[error("cannot aggregate an empty set of scores")]
    EmptyInput,
    #[error("bad score table at line {line}: {detail}")]
    ScoreTable { line: usize, detail: String },
}

/// Precision, treating an empty denominator as 0.
pub fn precision(tp: usize, fp: usize) -> f64 {
    ratio(tp, tp + fp)
}

pub fn recall(tp: usize, fn_: usize) -> f64 {
    ratio(tp, tp + fn_)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Half-up rounding for display. A small epsilon keeps values such as
/// 0.9305, whose binary form sits just below the midpoint, rounding up.
pub fn round_half_up(x: f64, digits: u32) -> f64 {
    let scale = 10f64.powi(digits as i32);
    let scaled = x * scale;
    let eps = 1e-9 * scaled.abs().max(1.0);
    if scaled >= 0.0 {
        (scaled + 0.5 + eps).floor() / scale
    } else {
        -((-scaled + 0.5 + eps).floor()) / scale
    }
}

/// Unweighted mean of per-label scores.
pub fn aggregate_macro<I>(scores: I) -> Result<f64, EvalError>
where
    I: IntoIterator<Item = f64>,
{
    let (sum, n) = scores
        .into_iter()
        .fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return Err(EvalError::EmptyInput);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LabelScore {
    pub fn from_counts(c: Counts) -> Self {
        let p = precision(c.tp, c.fp);
        let r = recall(c.tp, c.fn_);
        LabelScore {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            precision: p,
            recall: r,
            f1: f1_score(p, r),
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMatching {
    /// Boundaries and label must match exactly.
    #[default]
    Strict,
    /// Same label and any character overlap. Diagnostic only.
    LenientOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEvalReport {
    pub matching: ChunkMatching,
    pub per_label: BTreeMap<String, LabelScore>,
    pub macro_avg_f1: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_avg_f1: f64,
}

/// Strict chunk evaluation: a prediction is a true positive only when a gold
/// span with the same document, start, end and label exists. When `labels` is
/// given, spans with labels outside it are ignored.
pub fn evaluate_chunks(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
    labels: Option<&LabelSet>,
) -> Result<ChunkEvalReport, EvalError> {
    evaluate_chunks_with(gold, pred, labels, ChunkMatching::Strict)
}

pub fn evaluate_chunks_with(
    gold: &[AnnotatedDocument],
    pred: &[AnnotatedDocument],
    labels: Option<&LabelSet>,
    matching: ChunkMatching,
) -> Result<ChunkEvalReport, EvalError> {
    let mut pred_by_doc: HashMap<&str, Vec<&EntitySpan>> = HashMap::new();
    for d in pred {
        pred_by_doc.entry(&d.doc_id).or_default().extend(d.spans.iter());
    }
    let known: HashSet<&str> = gold.iter().map(|d| d.doc_id.as_str()).collect();
    let mut unknown: Vec<String> = pred_by_doc
        .keys()
        .filter(|k| !known.contains(*k))
        .map(|k| k.to_string())
        .collect();
    if !unknown.is_empty() {
        unknown.sort();
        return Err(EvalError::DocumentMismatch(unknown));
    }

    let mut gold_by_doc: BTreeMap<&str, Vec<&EntitySpan>> = BTreeMap::new();
    for d in gold {
        gold_by_doc.entry(&d.doc_id).or_default().extend(d.spans.iter());
    }
    let keep = |s: &&EntitySpan| labels.map_or(true, |ls| ls.contains(&s.label));

    let docs: Vec<(&str, Vec<&EntitySpan>)> = gold_by_doc.into_iter().collect();
    let totals = docs
        .par_iter()
        .map(|(id, g)| {
            let g: Vec<&EntitySpan> = g.iter().copied().filter(keep).collect();
            let p: Vec<&EntitySpan> = pred_by_doc
                .get(id)
                .map(|v| v.iter().copied().filter(keep).collect())
                .unwrap_or_default();
            match matching {
                ChunkMatching::Strict => strict_counts(id, &g, &p),
                ChunkMatching::LenientOverlap => lenient_counts(&g, &p),
            }
        })
        .reduce(BTreeMap::new, |mut a, b| {
            for (l, c) in b {
                a.entry(l).or_insert_with(Counts::default).add(&c);
            }
            a
        });
    Ok(report_from_counts(totals, matching))
}

fn report_from_counts(totals: BTreeMap<String, Counts>, matching: ChunkMatching) -> ChunkEvalReport {
    let mut pooled = Counts::default();
    let mut per_label = BTreeMap::new();
    for (l, c) in totals {
        pooled.add(&c);
        per_label.insert(l, LabelScore::from_counts(c));
    }
    let macro_avg_f1 = aggregate_macro(per_label.values().map(|s| s.f1)).unwrap_or(0.0);
    let micro = LabelScore::from_counts(pooled);
    ChunkEvalReport {
        matching,
        per_label,
        macro_avg_f1,
        micro_precision: micro.precision,
        micro_recall: micro.recall,
        micro_avg_f1: micro.f1,
    }
}

fn strict_counts(doc_id: &str, gold: &[&EntitySpan], pred: &[&EntitySpan]) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    let mut unmatched: HashSet<(&str, usize, usize)> = HashSet::new();
    for g in gold {
        if !unmatched.insert(g.key()) {
            log::warn!(
                "{doc_id}: duplicate gold span {} [{}, {}) collapsed",
                g.label,
                g.start,
                g.end
            );
        }
    }
    for p in pred {
        let c = out.entry(p.label.clone()).or_default();
        if unmatched.remove(&p.key()) {
            c.tp += 1;
        } else {
            c.fp += 1;
        }
    }
    for (label, _, _) in unmatched {
        out.entry(label.to_string()).or_default().fn_ += 1;
    }
    out
}

fn lenient_counts(gold: &[&EntitySpan], pred: &[&EntitySpan]) -> BTreeMap<String, Counts> {
    let mut out: BTreeMap<String, Counts> = BTreeMap::new();
    let mut used = vec![false; gold.len()];
    for p in pred {
        let hit = gold
            .iter()
            .enumerate()
            .find(|(i, g)| !used[*i] && g.label == p.label && g.overlaps(p));
        let c = out.entry(p.label.clone()).or_default();
        match hit {
            Some((i, _)) => {
                used[i] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    for (g, u) in gold.iter().zip(used) {
        if !u {
            out.entry(g.label.clone()).or_default().fn_ += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEvalReport {
    pub per_tag: BTreeMap<String, TagScore>,
    pub macro_avg: Average,
    pub weighted_avg: Average,
    pub accuracy: f64,
    pub total: usize,
}

/// Multiclass token scoring over every tag seen in gold or prediction,
/// including `O`. B- and I- tags are separate classes.
pub fn evaluate_tokens(gold: &[ConllRecord], pred: &[ConllRecord]) -> Result<TokenEvalReport, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Alignment {
            detail: format!("{} gold records vs {} predicted", gold.len(), pred.len()),
        });
    }
    let mut gold_n: HashMap<String, usize> = HashMap::new();
    let mut pred_n: HashMap<String, usize> = HashMap::new();
    let mut hit_n: HashMap<String, usize> = HashMap::new();
    let mut total = 0usize;
    let mut correct = 0usize;
    for (ri, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.sentences.len() != p.sentences.len() {
            return Err(EvalError::Alignment {
                detail: format!(
                    "record {ri}: {} gold sentences vs {} predicted",
                    g.sentences.len(),
                    p.sentences.len()
                ),
            });
        }
        for (si, (gs, ps)) in g.sentences.iter().zip(&p.sentences).enumerate() {
            if gs.tags.len() != ps.tags.len() {
                return Err(EvalError::Alignment {
                    detail: format!(
                        "record {ri}, sentence {si}: {} gold tokens vs {} predicted",
                        gs.tags.len(),
                        ps.tags.len()
                    ),
                });
            }
            for (gt, pt) in gs.tags.iter().zip(&ps.tags) {
                let (gt, pt) = (gt.to_string(), pt.to_string());
                total += 1;
                if gt == pt {
                    correct += 1;
                    *hit_n.entry(gt.clone()).or_default() += 1;
                }
                *gold_n.entry(gt).or_default() += 1;
                *pred_n.entry(pt).or_default() += 1;
            }
        }
    }
    let tags: std::collections::BTreeSet<&String> = gold_n.keys().chain(pred_n.keys()).collect();
    let mut per_tag = BTreeMap::new();
    for t in tags {
        let hits = hit_n.get(t).copied().unwrap_or(0);
        let support = gold_n.get(t).copied().unwrap_or(0);
        let predicted = pred_n.get(t).copied().unwrap_or(0);
        let p = ratio(hits, predicted);
        let r = ratio(hits, support);
        per_tag.insert(
            t.clone(),
            TagScore {
                precision: p,
                recall: r,
                f1: f1_score(p, r),
                support,
            },
        );
    }
    let n = per_tag.len().max(1) as f64;
    let macro_avg = Average {
        precision: per_tag.values().map(|s| s.precision).sum::<f64>() / n,
        recall: per_tag.values().map(|s| s.recall).sum::<f64>() / n,
        f1: per_tag.values().map(|s| s.f1).sum::<f64>() / n,
    };
    let w = total.max(1) as f64;
    let weighted_avg = Average {
        precision: per_tag.values().map(|s| s.precision * s.support as f64).sum::<f64>() / w,
        recall: per_tag.values().map(|s| s.recall * s.support as f64).sum::<f64>() / w,
        f1: per_tag.values().map(|s| s.f1 * s.support as f64).sum::<f64>() / w,
    };
    Ok(TokenEvalReport {
        per_tag,
        macro_avg,
        weighted_avg,
        accuracy: ratio(correct, total),
        total,
    })
}

fn fmt3(x: f64) -> String {
    format!("{:.3}", round_half_up(x, 3))
}

/// Fixed-width table for terminals.
pub fn format_chunk_table(r: &ChunkEvalReport) -> String {
    let width = r.per_label.keys().map(|l| l.len()).max().unwrap_or(5).max(9);
    let mut out = format!(
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "label", "precision", "recall", "f1-score", "support"
    );
    for (l, s) in &r.per_label {
        out.push_str(&format!(
            "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
            l,
            fmt3(s.precision),
            fmt3(s.recall),
            fmt3(s.f1),
            s.support()
        ));
    }
    let support: usize = r.per_label.values().map(|s| s.support()).sum();
    out.push('\n');
    out.push_str(&format!(
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "micro avg",
        fmt3(r.micro_precision),
        fmt3(r.micro_recall),
        fmt3(r.micro_avg_f1),
        support
    ));
    out.push_str(&format!(
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "macro avg", "", "", fmt3(r.macro_avg_f1), support
    ));
    out
}

pub fn format_token_table(r: &TokenEvalReport) -> String {
    let width = r.per_tag.keys().map(|l| l.len()).max().unwrap_or(5).max(12);
    let row = |name: &str, p: f64, rc: f64, f: f64, n: usize| {
        format!(
            "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
            name,
            fmt3(p),
            fmt3(rc),
            fmt3(f),
            n
        )
    };
    let mut out = format!(
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "tag", "precision", "recall", "f1-score", "support"
    );
    for (t, s) in &r.per_tag {
        out.push_str(&row(t, s.precision, s.recall, s.f1, s.support));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<width$}  {:>9}  {:>6}  {:>8}  {:>7}\n",
        "accuracy",
        "",
        "",
        fmt3(r.accuracy),
        r.total
    ));
    let m = &r.macro_avg;
    out.push_str(&row("macro avg", m.precision, m.recall, m.f1, r.total));
    let w = &r.weighted_avg;
    out.push_str(&row("weighted avg", w.precision, w.recall, w.f1, r.total));
    out
}

/// CSV in `label,precision,recall,f1,support` layout.
pub fn write_chunk_csv<W: Write>(r: &ChunkEvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "precision", "recall", "f1", "support"])?;
    for (l, s) in &r.per_label {
        w.write_record([
            l.clone(),
            fmt3(s.precision),
            fmt3(s.recall),
            fmt3(s.f1),
            s.support().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_token_csv<W: Write>(r: &TokenEvalReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["label", "precision", "recall", "f1", "support"])?;
    for (t, s) in &r.per_tag {
        w.write_record([
            t.clone(),
            fmt3(s.precision),
            fmt3(s.recall),
            fmt3(s.f1),
            s.support.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a per-label score table with a header row. The score column is the
/// one named `f1` (or `f1-score`, `f1_score`); without such a header the last
/// column is used.
pub fn read_f1_table<R: Read>(input: R) -> Result<Vec<(String, f64)>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::ScoreTable {
            line: 1,
            detail: e.to_string(),
        })?
        .clone();
    let col = headers
        .iter()
        .position(|h| matches!(h.to_lowercase().as_str(), "f1" | "f1-score" | "f1_score"));
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| EvalError::ScoreTable {
            line,
            detail: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let idx = col.unwrap_or(rec.len().saturating_sub(1));
        let raw = rec.get(idx).ok_or_else(|| EvalError::ScoreTable {
            line,
            detail: "missing score column".into(),
        })?;
        let v: f64 = raw.parse().map_err(|_| EvalError::ScoreTable {
            line,
            detail: format!("not a number: {raw:?}"),
        })?;
        out.push((rec.get(0).unwrap_or_default().to_string(), v));
    }
    Ok(out)
}
