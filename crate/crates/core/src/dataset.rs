//! Labeled datasets (TSV text classification, CoNLL sequence labeling) and
//! the seeded train/validation split.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::read_utf8;
use crate::error::{Error, Result};
use crate::labels::{NerLabelSet, TcLabelSet};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcExample {
    /// Index into [`TcLabelSet`].
    pub label: usize,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NerSentence {
    pub tokens: Vec<String>,
    /// BIO tag ids from [`NerLabelSet`], aligned with `tokens`.
    pub tags: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LabeledDataset {
    Tc(Vec<TcExample>),
    Ner(Vec<NerSentence>),
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        match self {
            LabeledDataset::Tc(v) => v.len(),
            LabeledDataset::Ner(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> LabeledDataset {
        match self {
            LabeledDataset::Tc(v) => LabeledDataset::Tc(idx.iter().map(|&i| v[i].clone()).collect()),
            LabeledDataset::Ner(v) => LabeledDataset::Ner(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    /// round-half-up of `train_ratio × n`
    pub fn train_size(&self, n: usize) -> usize {
        ((self.train_ratio * n as f64) + 0.5).floor() as usize
    }

    /// Seeded uniform permutation of `0..n` cut at [`SplitSpec::train_size`].
    pub fn split_indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if n == 0 {
            return Err(Error::Empty("dataset to split"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(Error::config("split.train_ratio", "must lie strictly between 0 and 1"));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng::stream(self.seed, "split"));
        let val = perm.split_off(self.train_size(n).min(n));
        Ok((perm, val))
    }
}

pub fn split_dataset(dataset: &LabeledDataset, spec: &SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (train, val) = spec.split_indices(dataset.len())?;
    Ok((dataset.select(&train), dataset.select(&val)))
}

/// Parses `label<TAB>text` lines. Blank lines are skipped.
pub fn parse_tc(text: &str, origin: &Path) -> Result<Vec<TcExample>> {
    let labels = TcLabelSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (label, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `label<TAB>text`".into()))?;
        let label = labels
            .index_of(label.trim())
            .ok_or_else(|| parse_err(format!("unknown category `{label}`")))?;
        out.push(TcExample {
            label,
            text: body.to_string(),
        });
    }
    Ok(out)
}

pub fn load_tc(path: impl AsRef<Path>) -> Result<Vec<TcExample>> {
    let path = path.as_ref();
    parse_tc(&read_utf8(path)?, path)
}

pub fn format_tc(examples: &[TcExample]) -> String {
    let labels = TcLabelSet::new();
    let mut s = String::new();
    for e in examples {
        let _ = writeln!(s, "{}\t{}", labels.name(e.label), e.text);
    }
    s
}

/// Parses CoNLL-style `token<TAB>tag` lines with blank lines between
/// sentences.
pub fn parse_ner(text: &str, origin: &Path) -> Result<Vec<NerSentence>> {
    let labels = NerLabelSet::new();
    let mut out = Vec::new();
    let mut cur = NerSentence {
        tokens: vec![],
        tags: vec![],
    };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.tokens.is_empty() {
                out.push(std::mem::replace(
                    &mut cur,
                    NerSentence {
                        tokens: vec![],
                        tags: vec![],
                    },
                ));
            }
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg,
        };
        let (tok, tag) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err("expected `token<TAB>tag`".into()))?;
        let tag = labels
            .tag_id(tag.trim())
            .ok_or_else(|| parse_err(format!("unknown tag `{tag}`")))?;
        cur.tokens.push(tok.to_string());
        cur.tags.push(tag);
    }
    if !cur.tokens.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn load_ner(path: impl AsRef<Path>) -> Result<Vec<NerSentence>> {
    let path = path.as_ref();
    parse_ner(&read_utf8(path)?, path)
}

pub fn format_ner(sentences: &[NerSentence]) -> String {
    let labels = NerLabelSet::new();
    let mut s = String::new();
    for sent in sentences {
        for (t, g) in sent.tokens.iter().zip(&sent.tags) {
            let _ = writeln!(s, "{t}\t{}", labels.tag_name(*g));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let spec = SplitSpec::default();
        let (a, b) = spec.split_indices(10).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a, b) = spec.split_indices(611).unwrap();
        assert_eq!((a.len(), b.len()), (489, 122));
        assert_eq!(SplitSpec { train_ratio: 0.5, seed: 0 }.train_size(5), 3);
        assert!(matches!(spec.split_indices(0), Err(Error::Empty(_))));
    }

    #[test]
    fn split_is_seeded() {
        let s7 = SplitSpec { train_ratio: 0.8, seed: 7 };
        let s8 = SplitSpec { train_ratio: 0.8, seed: 8 };
        assert_eq!(s7.split_indices(50).unwrap(), s7.split_indices(50).unwrap());
        let (a7, _) = s7.split_indices(50).unwrap();
        let (a8, v8) = s8.split_indices(50).unwrap();
        assert_ne!(a7, a8);
        assert_eq!((a8.len(), v8.len()), (40, 10));
    }

    #[test]
    fn tc_round_trip_and_errors() {
        let text = "direct\t梁的跨度\nothers\tfoo bar\n\n";
        let ex = parse_tc(text, Path::new("t.tsv")).unwrap();
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[1].label, 6);
        assert_eq!(parse_tc(&format_tc(&ex), Path::new("t")).unwrap(), ex);
        match parse_tc("direct\tok\nbogus\tx\n", Path::new("t.tsv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ner_round_trip() {
        let text = "梁\tB-obj\n宽\tB-prop\n\n柱\tO\n";
        let s = parse_ner(text, Path::new("n")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tags, vec![1, 5]);
        assert_eq!(parse_ner(&format_ner(&s), Path::new("n")).unwrap(), s);
        assert!(parse_ner("x\tB-nope\n", Path::new("n")).is_err());
    }
}
