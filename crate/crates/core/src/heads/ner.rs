use ndgrad::{Float, Graph, Params, Var};

use super::crf::{crf_loss, viterbi_decode, CrfScores};
use super::lstm::{bilstm, lstm};
use super::tc::{conv, embed};
use super::{ModelConfig, ModelKind, NerKind, TokenBatch, CHAR_IDS, ENCODER_PREFIX};
use crate::encoder::{encode, linear};
use crate::error::{Error, Result};
use crate::metrics::repair_bio;

/// Per-token tag scores `[batch, len, 15]`, where `len` is the longest real
/// row of the batch (capped at the model's token capacity).
pub fn ner_emissions<T: Float>(g: &mut Graph<T>, p: &Params<T>, cfg: &ModelConfig, x: &TokenBatch) -> Result<Var> {
    let ModelKind::Ner(kind) = cfg.kind else {
        return Err(Error::InvalidInput(format!("{} is not a tagging model", cfg.kind)));
    };
    x.check(cfg)?;
    let b = x.batch;
    let features = if kind == NerKind::EncoderTokenFt {
        let framed = x.framed()?;
        let hidden = encode(g, p, cfg.encoder_config()?, ENCODER_PREFIX, &framed)?.hidden;
        let l = framed.len.saturating_sub(2).max(1);
        g.slice(hidden, 1, 1, 1 + l)?
    } else {
        let l = x.used_len().min(cfg.capacity());
        let (ids, mask) = x.columns(l);
        let mut emb = embed(g, p, &ids, b, l)?;
        if cfg.char_cnn() {
            let chars = char_features(g, p, cfg, &ids)?;
            let chars = g.reshape(chars, &[b, l, cfg.char_filters])?;
            emb = g.concat(&[emb, chars], 2)?;
        }
        match kind {
            NerKind::Lstm => lstm(g, p, "rnn.fwd", emb, &mask, false)?.states,
            _ => bilstm(g, p, "rnn", emb, &mask)?.0,
        }
    };
    let features = g.dropout(features, cfg.dropout)?;
    linear(g, p, features, "out")
}

/// Width-`char_window` convolution over each word's character embeddings,
/// max-pooled to one `[char_filters]` vector per word.
fn char_features<T: Float>(g: &mut Graph<T>, p: &Params<T>, cfg: &ModelConfig, ids: &[usize]) -> Result<Var> {
    let lookup = p.require(CHAR_IDS)?;
    let w = cfg.max_word_chars;
    let cids: Vec<usize> = ids
        .iter()
        .flat_map(|&id| lookup.row(id).iter().map(|c| c.to_usize().unwrap()))
        .collect();
    let table = g.param(p, "char.table")?;
    let ce = g.embedding(table, &cids, &[ids.len(), w])?;
    let c = conv(g, p, ce, "char.conv", cfg.char_window / 2)?;
    let c = g.relu(c);
    Ok(g.max_over_time(c)?)
}

/// Mean training loss: CRF negative log-likelihood for CRF kinds, token
/// cross-entropy over real positions otherwise. Gold tags past the model's
/// capacity are ignored.
pub fn ner_loss<T: Float>(g: &mut Graph<T>, p: &Params<T>, cfg: &ModelConfig, x: &TokenBatch, tags: &[Vec<usize>]) -> Result<Var> {
    let em = ner_emissions(g, p, cfg, x)?;
    let s = g.shape(em).to_vec();
    let (l, t) = (s[1], s[2]);
    let lens: Vec<usize> = x.lens.iter().map(|&n| n.min(l)).collect();
    if let Some(b) = lens.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("sentence {b} of the batch has no tokens")));
    }
    if cfg.kind.has_crf() {
        let tr = g.param(p, "crf.transitions")?;
        let st = g.param(p, "crf.start")?;
        let en = g.param(p, "crf.end")?;
        return crf_loss(g, em, tr, st, en, tags, &lens);
    }
    let mut targets = vec![None; x.batch * l];
    for (b, (tg, &n)) in tags.iter().zip(&lens).enumerate() {
        for i in 0..n {
            targets[b * l + i] = Some(tg[i]);
        }
    }
    let flat = g.reshape(em, &[x.batch * l, t])?;
    Ok(g.cross_entropy(flat, &targets)?)
}

/// Best tag sequence per row over its first `min(len, capacity)` tokens:
/// Viterbi for CRF kinds, repaired per-token argmax otherwise.
pub(crate) fn ner_decode<T: Float>(g: &Graph<T>, em: Var, p: &Params<T>, cfg: &ModelConfig, x: &TokenBatch) -> Result<Vec<Vec<usize>>> {
    let s = g.shape(em);
    let (l, t) = (s[1], s[2]);
    let data = g.value(em).data();
    let crf = if cfg.kind.has_crf() {
        Some((
            p.require("crf.transitions")?.data(),
            p.require("crf.start")?.data(),
            p.require("crf.end")?.data(),
        ))
    } else {
        None
    };
    let mut out = Vec::with_capacity(x.batch);
    for b in 0..x.batch {
        let n = x.lens[b].min(l);
        if n == 0 {
            out.push(Vec::new());
            continue;
        }
        let rows = &data[b * l * t..(b * l + n) * t];
        let tags = match crf {
            Some((tr, st, en)) => viterbi_decode(rows, &CrfScores::new(t, tr, st, en)?)?.0,
            None => {
                let argmax: Vec<usize> = rows
                    .chunks(t)
                    .map(|r| {
                        let mut best = 0;
                        for (j, v) in r.iter().enumerate() {
                            if *v > r[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                repair_bio(&argmax)
            }
        };
        out.push(tags);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderCheckpoint, EncoderConfig};
    use crate::heads::{char_inventory, Init, TaskModel};
    use crate::tokenize::Vocabulary;
    use ndgrad::gradcheck::check_params;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["ab", "b", "cab", "d", "ee", "f"]).unwrap()
    }

    fn tiny(kind: NerKind, v: &Vocabulary, padding: usize) -> TaskModel {
        let mut cfg = ModelConfig {
            padding,
            embed_dim: 3,
            hidden: 2,
            char_dim: 2,
            char_filters: 2,
            max_word_chars: 3,
            seed: 11,
            ..ModelConfig::new(ModelKind::Ner(kind))
        };
        if kind == NerKind::BilstmCnnCrf {
            cfg.chars = char_inventory(v);
        }
        if kind == NerKind::EncoderTokenFt {
            let enc = EncoderConfig {
                layers: 1,
                heads: 1,
                d_model: 4,
                d_ff: 4,
                max_len: padding,
                seed: 1,
                ..Default::default()
            };
            let ck = EncoderCheckpoint::init(enc, v).unwrap();
            return TaskModel::build(cfg, Init::Encoder(&ck), v).unwrap();
        }
        TaskModel::build(cfg, Init::Random, v).unwrap()
    }

    #[test]
    fn emission_shape() {
        let v = vocab();
        for kind in NerKind::ALL {
            let m = tiny(kind, &v, 22);
            let cap = m.config.capacity();
            let rows: Vec<Vec<usize>> = (0..4).map(|r| (0..20).map(|i| 5 + (i + r) % 6).collect()).collect();
            let refs: Vec<&[usize]> = rows.iter().map(Vec::as_slice).collect();
            let x = TokenBatch::pad(&refs, 22);
            let mut g = Graph::new();
            let em = ner_emissions(&mut g, &m.params, &m.config, &x).unwrap();
            assert_eq!(g.shape(em), &[4, 20.min(cap), 15], "{kind:?}");
        }
    }

    /// Emissions at each position, for a batch of one sentence.
    fn emissions(m: &TaskModel, ids: &[usize]) -> Vec<Vec<f64>> {
        let p = m.params.cast::<f64>();
        let x = TokenBatch::pad(&[ids], m.config.padding);
        let mut g = Graph::new();
        let em = ner_emissions(&mut g, &p, &m.config, &x).unwrap();
        g.value(em).data().chunks(15).map(<[f64]>::to_vec).collect()
    }

    #[test]
    fn directional_sensitivity() {
        let v = vocab();
        let a = [5, 6, 7, 8, 9];
        let mut b = a;
        b[3] = 10;
        let changed = |kind| {
            let m = tiny(kind, &v, 8);
            let (ea, eb) = (emissions(&m, &a), emissions(&m, &b));
            (0..a.len()).map(|i| ea[i] != eb[i]).collect::<Vec<bool>>()
        };
        // A change at position 3 reaches only positions 3.. going forward.
        assert_eq!(changed(NerKind::Lstm), vec![false, false, false, true, true]);
        // The backward direction carries it to earlier positions too.
        assert_eq!(changed(NerKind::Bilstm), vec![true; 5]);
    }

    #[test]
    fn padding_does_not_leak_into_real_positions() {
        let v = vocab();
        for kind in [NerKind::Bilstm, NerKind::BilstmCrf, NerKind::EncoderTokenFt] {
            let m = tiny(kind, &v, 8);
            let alone = emissions(&m, &[5, 6]);
            let p = m.params.cast::<f64>();
            let x = TokenBatch::pad(&[&[5, 6], &[7, 8, 9, 10, 5]], 8);
            let mut g = Graph::new();
            let em = ner_emissions(&mut g, &p, &m.config, &x).unwrap();
            let d = g.value(em).data();
            for i in 0..2 {
                for j in 0..15 {
                    assert!((d[i * 15 + j] - alone[i][j]).abs() < 1e-12, "{kind:?}");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_every_kind() {
        let v = vocab();
        for kind in NerKind::ALL {
            let m = tiny(kind, &v, 6);
            let p = m.params.cast::<f64>();
            let x = TokenBatch::pad(&[&[5, 6, 7, 8], &[9, 10, 5]], 6);
            let tags = vec![vec![1, 2, 0, 3], vec![0, 5, 6]];
            let r = check_params(&p, |g, p| Ok(ner_loss(g, p, &m.config, &x, &tags)?), 1e-6, 6, 1e-2, 2).unwrap();
            assert!(r.max_rel_error < 1e-5, "{kind:?}: {r:?}");
        }
    }

    #[test]
    fn char_cnn_reduces_to_bilstm_crf_without_an_inventory() {
        let v = vocab();
        let mut cfg = ModelConfig {
            embed_dim: 3,
            hidden: 2,
            ..ModelConfig::new(ModelKind::Ner(NerKind::BilstmCnnCrf))
        };
        let plain = TaskModel::build(cfg.clone(), Init::Random, &v).unwrap();
        assert!(!plain.params.contains("char.table"));
        cfg.kind = ModelKind::Ner(NerKind::BilstmCrf);
        let crf = TaskModel::build(cfg, Init::Random, &v).unwrap();
        assert_eq!(plain.params, crf.params);
    }

    #[test]
    fn decoding_falls_back_to_repaired_argmax() {
        let v = vocab();
        let m = tiny(NerKind::Bilstm, &v, 4);
        let p = m.params.clone();
        let x = TokenBatch::pad(&[&[5, 6, 7]], 4);
        let mut g = Graph::new();
        let em = ner_emissions(&mut g, &p, &m.config, &x).unwrap();
        let tags = ner_decode(&g, em, &p, &m.config, &x).unwrap();
        assert_eq!(tags[0].len(), 3);
        assert_eq!(tags[0], repair_bio(&tags[0]));
    }
}
