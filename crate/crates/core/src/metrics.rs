//! Per-label precision/recall/F1, the n_i-weighted F1, BIO span extraction
//! and metric reports for both tasks.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{Bio, NerLabelSet, TcLabelSet, NER_LABELS, TC_LABELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Tc,
    Ner,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Tc => "tc",
            TaskKind::Ner => "ner",
        }
    }
}

/// How NER elements are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NerCounting {
    /// A predicted span is correct when label, start and end all match.
    #[default]
    ExactSpan,
    /// Every non-O token is one element of its label.
    Token,
}

impl NerCounting {
    pub fn as_str(self) -> &'static str {
        match self {
            NerCounting::ExactSpan => "exact_span",
            NerCounting::Token => "token",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub n_correct: usize,
    pub n_labeled: usize,
    pub n_true: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub n_i: usize,
}

impl LabelMetrics {
    pub fn from_counts(label: &str, n_correct: usize, n_labeled: usize, n_true: usize) -> Result<Self> {
        let (p, r, f1) = prf(n_correct, n_labeled, n_true)?;
        Ok(Self {
            label: label.to_string(),
            n_correct,
            n_labeled,
            n_true,
            p,
            r,
            f1,
            n_i: n_true,
        })
    }
}

/// Precision, recall and F1 from element counts. Zero denominators give 0.
pub fn prf(n_correct: usize, n_labeled: usize, n_true: usize) -> Result<(f64, f64, f64)> {
    if n_correct > n_labeled.min(n_true) {
        return Err(Error::InvalidInput(format!(
            "N_correct={n_correct} exceeds min(N_labeled={n_labeled}, N_true={n_true})"
        )));
    }
    let p = if n_labeled == 0 { 0.0 } else { n_correct as f64 / n_labeled as f64 };
    let r = if n_true == 0 { 0.0 } else { n_correct as f64 / n_true as f64 };
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    Ok((p, r, f1))
}

/// `Σ n_i·F1_i / Σ n_i`.
pub fn weighted_f1(per_label: &[LabelMetrics]) -> Result<f64> {
    let total: usize = per_label.iter().map(|m| m.n_i).sum();
    if total == 0 {
        return Err(Error::Empty("label weights (every n_i is 0)"));
    }
    let num: f64 = per_label.iter().map(|m| m.n_i as f64 * m.f1).sum();
    Ok(num / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub label: usize,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Maximal `B-x (I-x)*` runs. An `I-x` that does not continue a run of the
/// same label opens a new span, as if it were `B-x`.
pub fn extract_spans(tags: &[usize]) -> Result<Vec<Span>> {
    let set = NerLabelSet::new();
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &t) in tags.iter().enumerate() {
        let bio = set.decode(t).ok_or(Error::IdOutOfRange {
            id: t,
            size: set.num_tags(),
        })?;
        match bio {
            Bio::I(l) if open.is_some_and(|s| s.label == l) => {
                open.as_mut().unwrap().end = i + 1;
            }
            Bio::B(l) | Bio::I(l) => {
                spans.extend(open.take());
                open = Some(Span {
                    label: l,
                    start: i,
                    end: i + 1,
                });
            }
            Bio::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Rewrites stray `I-x` tags as `B-x` so the sequence is valid BIO.
pub fn repair_bio(tags: &[usize]) -> Vec<usize> {
    let set = NerLabelSet::new();
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<usize> = None;
    for &t in tags {
        let fixed = match set.decode(t) {
            Some(Bio::I(l)) if prev != Some(l) => set.encode(Bio::B(l)),
            _ => t,
        };
        prev = match set.decode(fixed) {
            Some(Bio::B(l)) | Some(Bio::I(l)) => Some(l),
            _ => None,
        };
        out.push(fixed);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    /// Set for NER reports.
    pub counting: Option<NerCounting>,
    pub labels: Vec<LabelMetrics>,
    pub weighted_f1: f64,
    pub total_n: usize,
    pub total_labeled: usize,
    pub total_correct: usize,
}

impl MetricsReport {
    fn assemble(task: TaskKind, counting: Option<NerCounting>, labels: Vec<LabelMetrics>) -> Result<Self> {
        Ok(Self {
            task,
            counting,
            weighted_f1: weighted_f1(&labels)?,
            total_n: labels.iter().map(|m| m.n_i).sum(),
            total_labeled: labels.iter().map(|m| m.n_labeled).sum(),
            total_correct: labels.iter().map(|m| m.n_correct).sum(),
            labels,
        })
    }

    /// Accuracy for TC (micro precision), span/token micro precision for NER.
    pub fn micro_precision(&self) -> f64 {
        if self.total_labeled == 0 {
            0.0
        } else {
            self.total_correct as f64 / self.total_labeled as f64
        }
    }

    pub fn header_comment(&self) -> String {
        match self.task {
            TaskKind::Tc => "# task=tc; labels: all 7 categories including others; weights n_i = N_true".to_string(),
            TaskKind::Ner => format!(
                "# task=ner; counting={}; O tag excluded; weights n_i = N_true",
                self.counting.unwrap_or_default().as_str()
            ),
        }
    }

    /// TSV with one row per label and a final `WEIGHTED` row, 4 decimals.
    pub fn to_tsv(&self) -> String {
        let mut s = self.header_comment();
        s.push('\n');
        s.push_str("label\tN_correct\tN_labeled\tN_true\tP\tR\tF1\tn_i\n");
        for m in &self.labels {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{}",
                m.label, m.n_correct, m.n_labeled, m.n_true, m.p, m.r, m.f1, m.n_i
            );
        }
        let _ = writeln!(
            s,
            "WEIGHTED\t{}\t{}\t{}\t\t\t{:.4}\t{}",
            self.total_correct, self.total_labeled, self.total_n, self.weighted_f1, self.total_n
        );
        s
    }
}

pub fn evaluate_tc(pred: &[usize], gold: &[usize]) -> Result<MetricsReport> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold examples",
            pred.len(),
            gold.len()
        )));
    }
    let c = TcLabelSet::new().len();
    let (mut correct, mut labeled, mut truth) = (vec![0; c], vec![0; c], vec![0; c]);
    for (&p, &g) in pred.iter().zip(gold) {
        if p >= c || g >= c {
            return Err(Error::IdOutOfRange { id: p.max(g), size: c });
        }
        labeled[p] += 1;
        truth[g] += 1;
        if p == g {
            correct[p] += 1;
        }
    }
    let labels = (0..c)
        .map(|i| LabelMetrics::from_counts(TC_LABELS[i], correct[i], labeled[i], truth[i]))
        .collect::<Result<_>>()?;
    MetricsReport::assemble(TaskKind::Tc, None, labels)
}

pub fn evaluate_ner(pred: &[Vec<usize>], gold: &[Vec<usize>], counting: NerCounting) -> Result<MetricsReport> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predicted sequences for {} gold sequences",
            pred.len(),
            gold.len()
        )));
    }
    let set = NerLabelSet::new();
    let c = set.num_labels();
    let (mut correct, mut labeled, mut truth) = (vec![0; c], vec![0; c], vec![0; c]);
    for (k, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::InvalidInput(format!(
                "sequence {k}: {} predicted tags for {} gold tags",
                p.len(),
                g.len()
            )));
        }
        match counting {
            NerCounting::ExactSpan => {
                let ps = extract_spans(p)?;
                let gs: HashSet<Span> = extract_spans(g)?.into_iter().collect();
                for s in &ps {
                    labeled[s.label] += 1;
                    if gs.contains(s) {
                        correct[s.label] += 1;
                    }
                }
                for s in &gs {
                    truth[s.label] += 1;
                }
            }
            NerCounting::Token => {
                let label_of = |t: usize| -> Result<Option<usize>> {
                    match set.decode(t) {
                        Some(Bio::B(l)) | Some(Bio::I(l)) => Ok(Some(l)),
                        Some(Bio::O) => Ok(None),
                        None => Err(Error::IdOutOfRange {
                            id: t,
                            size: set.num_tags(),
                        }),
                    }
                };
                for (&pt, &gt) in p.iter().zip(g) {
                    let (pl, gl) = (label_of(pt)?, label_of(gt)?);
                    if let Some(l) = pl {
                        labeled[l] += 1;
                    }
                    if let Some(l) = gl {
                        truth[l] += 1;
                    }
                    if pl.is_some() && pl == gl {
                        correct[pl.unwrap()] += 1;
                    }
                }
            }
        }
    }
    let labels = (0..c)
        .map(|i| LabelMetrics::from_counts(NER_LABELS[i], correct[i], labeled[i], truth[i]))
        .collect::<Result<_>>()?;
    MetricsReport::assemble(TaskKind::Ner, Some(counting), labels)
}
