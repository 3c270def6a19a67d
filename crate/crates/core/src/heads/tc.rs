use ndgrad::{lit, Float, Graph, Params, Tensor, Var};

use super::lstm::bilstm;
use super::{ModelConfig, ModelKind, TcKind, TokenBatch, EMBED_TABLE, ENCODER_PREFIX};
use crate::encoder::{cls_vectors, encode, linear};
use crate::error::{Error, Result};

/// Pads lose to every real position in a max over `tanh` outputs.
const PAD_OFFSET: f64 = -3.0;

pub(crate) fn conv<T: Float>(g: &mut Graph<T>, p: &Params<T>, x: Var, name: &str, pad: usize) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.conv1d(x, w, pad)?;
    Ok(g.add(y, b)?)
}

pub(crate) fn embed<T: Float>(g: &mut Graph<T>, p: &Params<T>, ids: &[usize], batch: usize, len: usize) -> Result<Var> {
    let table = g.param(p, EMBED_TABLE)?;
    Ok(g.embedding(table, ids, &[batch, len])?)
}

/// Class logits `[batch, 7]` for a batch padded to the model's padding size.
pub fn tc_forward<T: Float>(g: &mut Graph<T>, p: &Params<T>, cfg: &ModelConfig, x: &TokenBatch) -> Result<Var> {
    let ModelKind::Tc(kind) = cfg.kind else {
        return Err(Error::InvalidInput(format!("{} is not a classification model", cfg.kind)));
    };
    x.check(cfg)?;
    let b = x.batch;
    let features = match kind {
        TcKind::TextCnn => {
            let emb = embed(g, p, &x.ids, b, x.len)?;
            let mut pooled = Vec::with_capacity(cfg.widths.len());
            for &w in &cfg.widths {
                let c = conv(g, p, emb, &format!("conv{w}"), 0)?;
                let c = g.relu(c);
                pooled.push(g.max_over_time(c)?);
            }
            g.concat(&pooled, 1)?
        }
        TcKind::TextRnn => {
            let l = x.used_len();
            let (ids, mask) = x.columns(l);
            let emb = embed(g, p, &ids, b, l)?;
            bilstm(g, p, "rnn", emb, &mask)?.1
        }
        TcKind::TextRnnAtt => {
            let l = x.used_len();
            let (ids, mask) = x.columns(l);
            let emb = embed(g, p, &ids, b, l)?;
            let states = bilstm(g, p, "rnn", emb, &mask)?.0;
            let u = linear(g, p, states, "att.proj")?;
            let u = g.tanh(u);
            let q = g.param(p, "att.query")?;
            let scores = g.matmul(u, q)?;
            let scores = g.reshape(scores, &[b, l])?;
            let a = g.masked_softmax(scores, &mask)?;
            let a = g.reshape(a, &[b, 1, l])?;
            let ctx = g.matmul(a, states)?;
            let h2 = g.shape(states)[2];
            g.reshape(ctx, &[b, h2])?
        }
        TcKind::TextRcnn => {
            let l = x.used_len();
            let (ids, mask) = x.columns(l);
            let emb = embed(g, p, &ids, b, l)?;
            let (_, _, fwd, bwd) = bilstm(g, p, "rnn", emb, &mask)?;
            let joined = g.concat(&[fwd.states, emb, bwd.states], 2)?;
            let y = linear(g, p, joined, "proj")?;
            let y = g.tanh(y);
            let h = g.shape(y)[2];
            let off = g.constant(Tensor::from_fn(&[b, l, h], |k| {
                if mask[k / h] {
                    T::zero()
                } else {
                    lit(PAD_OFFSET)
                }
            }));
            let y = g.add(y, off)?;
            g.max_over_time(y)?
        }
        TcKind::Dpcnn => {
            let emb = embed(g, p, &x.ids, b, x.len)?;
            let mut h = conv(g, p, emb, "region", 1)?;
            for i in 0..=cfg.dpcnn_blocks() {
                if i > 0 {
                    h = g.max_pool1d(h, 3, 2)?;
                }
                let r = g.relu(h);
                let r = conv(g, p, r, &format!("block{i}.conv1"), 1)?;
                let r = g.relu(r);
                let r = conv(g, p, r, &format!("block{i}.conv2"), 1)?;
                h = g.add(h, r)?;
            }
            g.max_over_time(h)?
        }
        TcKind::TransformerCls | TcKind::EncoderFt => {
            let e = cfg.encoder_config()?;
            let framed = x.framed()?;
            let hidden = encode(g, p, e, ENCODER_PREFIX, &framed)?.hidden;
            cls_vectors(g, hidden)?
        }
    };
    let features = g.dropout(features, cfg.dropout)?;
    linear(g, p, features, "out")
}
