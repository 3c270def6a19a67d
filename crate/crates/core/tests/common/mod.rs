//! Independent oracles and on-disk fixtures for the integration suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use domir::dataset::{format_ner, format_tc, NerSentence, TcExample};
use domir::encoder::{EncoderCheckpoint, EncoderConfig};
use domir::labels::NerLabelSet;
use domir::sgns::EmbeddingTable;
use domir::tokenize::Vocabulary;

/// Log-partition and best path by enumerating all `t^n` tag sequences.
/// The best path is the reverse-lexicographically smallest among the
/// maximal scores, i.e. the lowest tag wins going from the last position
/// backwards.
pub fn brute_crf(em: &[f64], tr: &[f64], st: &[f64], en: &[f64], n: usize, t: usize) -> (f64, Vec<usize>) {
    let mut scores = Vec::new();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for code in 0..t.pow(n as u32) {
        let path: Vec<usize> = (0..n).map(|i| (code / t.pow(i as u32)) % t).collect();
        let mut s = st[path[0]] + en[path[n - 1]];
        for i in 0..n {
            s += em[i * t + path[i]];
            if i > 0 {
                s += tr[path[i - 1] * t + path[i]];
            }
        }
        scores.push(s);
        let rev: Vec<usize> = path.iter().rev().copied().collect();
        let better = match &best {
            None => true,
            Some((bs, bp)) => s > *bs || (s == *bs && rev < bp.iter().rev().copied().collect::<Vec<_>>()),
        };
        if better {
            best = Some((s, path));
        }
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logz = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    (logz, best.unwrap().1)
}

/// Per-label (N_correct, N_labeled, N_true) recounted from scratch.
pub type Counts = BTreeMap<String, (usize, usize, usize)>;

/// Weighted F1 straight from counts: n_i = N_true, zero denominators
/// give 0.
pub fn weighted_from_counts(counts: &Counts) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for &(c, l, t) in counts.values() {
        let p = if l == 0 { 0.0 } else { c as f64 / l as f64 };
        let r = if t == 0 { 0.0 } else { c as f64 / t as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        num += t as f64 * f;
        den += t as f64;
    }
    num / den
}

pub fn tc_counts(pred: &[usize], gold: &[usize], labels: usize) -> Counts {
    let mut m = Counts::new();
    for l in 0..labels {
        let c = pred.iter().zip(gold).filter(|(p, g)| **p == l && **g == l).count();
        let n_l = pred.iter().filter(|p| **p == l).count();
        let n_t = gold.iter().filter(|g| **g == l).count();
        m.insert(format!("{l}"), (c, n_l, n_t));
    }
    m
}

/// Spans read off tag names: `B-x` opens, `I-x` continues a run of `x` or
/// else opens, `O` closes.
pub fn spans_by_name(tags: &[usize]) -> Vec<(String, usize, usize)> {
    let set = NerLabelSet::new();
    let names: Vec<String> = tags.iter().map(|&t| set.tag_name(t)).collect();
    let mut out: Vec<(String, usize, usize)> = Vec::new();
    let mut open = false;
    for (i, name) in names.iter().enumerate() {
        if name == "O" {
            open = false;
            continue;
        }
        let (prefix, label) = name.split_once('-').unwrap();
        if prefix == "I" && open && out.last().unwrap().0 == label {
            out.last_mut().unwrap().2 = i + 1;
        } else {
            out.push((label.to_string(), i, i + 1));
            open = true;
        }
    }
    out
}

pub fn ner_counts(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Counts {
    let set = NerLabelSet::new();
    let mut m: Counts = (0..set.num_labels()).map(|l| (set.label_name(l).to_string(), (0, 0, 0))).collect();
    for (p, g) in pred.iter().zip(gold) {
        let ps = spans_by_name(p);
        let gs = spans_by_name(g);
        for s in &ps {
            m.get_mut(&s.0).unwrap().1 += 1;
            if gs.contains(s) {
                m.get_mut(&s.0).unwrap().0 += 1;
            }
        }
        for s in &gs {
            m.get_mut(&s.0).unwrap().2 += 1;
        }
    }
    m
}

/// Writes the files an experiment template expects under `dir`: labeled
/// data, a vocabulary, three embedding tables and three encoder checkpoints.
pub fn write_protocol_fixture(dir: &Path, tc: &[TcExample], ner: &[NerSentence], vocab: &Vocabulary, encoder: &EncoderConfig) {
    for sub in ["data", "embeddings", "checkpoints"] {
        std::fs::create_dir_all(dir.join(sub)).unwrap();
    }
    std::fs::write(dir.join("data/tc.tsv"), format_tc(tc)).unwrap();
    std::fs::write(dir.join("data/ner.conll"), format_ner(ner)).unwrap();
    vocab.save(dir.join("vocab.txt")).unwrap();
    for (i, name) in ["general", "in_domain", "close_domain"].into_iter().enumerate() {
        EmbeddingTable::init(vocab.clone(), 8, i as u64)
            .save(dir.join(format!("embeddings/{name}.vec")))
            .unwrap();
        let c = EncoderConfig {
            seed: i as u64,
            ..encoder.clone()
        };
        EncoderCheckpoint::init(c, vocab).unwrap().save(dir.join(format!("checkpoints/{name}"))).unwrap();
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
