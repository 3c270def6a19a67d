//! Miniature bidirectional transformer encoder with masked-language-model
//! and next-sentence-prediction heads.

mod mlm;
mod pretrain;

pub use mlm::{make_mlm_example, Corruption, MlmExample, NspSampler};
pub use pretrain::{further_pretrain, mlm_eval_loss, pretrain, pretrain_loss, HistoryEntry, PretrainConfig};

use ndgrad::{lit, Float, Graph, Params, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::Vocabulary;

pub const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    /// Longest input including `[CLS]` and `[SEP]` tokens.
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            max_len: 64,
            vocab_size: 0,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return Err(Error::config("encoder.d_model", format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::config("encoder.max_len", "must be at least 2"));
        }
        if self.vocab_size < crate::tokenize::NUM_SPECIALS {
            return Err(Error::config("encoder.vocab_size", "must cover the special tokens"));
        }
        if self.d_ff == 0 {
            return Err(Error::config("encoder.d_ff", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("encoder.dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Encoder weights plus everything needed to reuse them.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderCheckpoint {
    pub config: EncoderConfig,
    pub params: Params<f32>,
    pub vocab_fingerprint: String,
    pub history: Vec<HistoryEntry>,
}

impl EncoderCheckpoint {
    /// Seeded initialization for `vocab`.
    pub fn init(mut config: EncoderConfig, vocab: &Vocabulary) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut params = Params::new();
        init_encoder_params(&mut params, &config, "");
        init_pretrain_heads(&mut params, &config);
        Ok(Self {
            config,
            params,
            vocab_fingerprint: vocab.fingerprint(),
            history: Vec::new(),
        })
    }

    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let found = vocab.fingerprint();
        if found != self.vocab_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.vocab_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }
}

fn init_ln<T: Float>(p: &mut Params<T>, name: &str, d: usize) {
    p.init_const(&format!("{name}.gain"), &[d], 1.0);
    p.init_const(&format!("{name}.bias"), &[d], 0.0);
}

fn init_linear<T: Float>(p: &mut Params<T>, seed: u64, name: &str, d_in: usize, d_out: usize) {
    p.init_normal(seed, &format!("{name}.w"), &[d_in, d_out], INIT_STD);
    p.init_const(&format!("{name}.b"), &[d_out], 0.0);
}

/// Backbone parameters under `prefix` (empty for checkpoints).
pub fn init_encoder_params<T: Float>(p: &mut Params<T>, c: &EncoderConfig, prefix: &str) {
    let (d, s) = (c.d_model, c.seed);
    p.init_normal(s, &format!("{prefix}embeddings.token"), &[c.vocab_size, d], INIT_STD);
    p.init_normal(s, &format!("{prefix}embeddings.position"), &[c.max_len, d], INIT_STD);
    p.init_normal(s, &format!("{prefix}embeddings.segment"), &[2, d], INIT_STD);
    init_ln(p, &format!("{prefix}embeddings.ln"), d);
    for i in 0..c.layers {
        let l = format!("{prefix}layer{i}");
        for m in ["q", "k", "v", "o"] {
            init_linear(p, s, &format!("{l}.attn.{m}"), d, d);
        }
        init_ln(p, &format!("{l}.ln1"), d);
        init_linear(p, s, &format!("{l}.ffn.1"), d, c.d_ff);
        init_linear(p, s, &format!("{l}.ffn.2"), c.d_ff, d);
        init_ln(p, &format!("{l}.ln2"), d);
    }
}

fn init_pretrain_heads<T: Float>(p: &mut Params<T>, c: &EncoderConfig) {
    let (d, s) = (c.d_model, c.seed);
    init_linear(p, s, "mlm.transform", d, d);
    init_ln(p, "mlm.ln", d);
    p.init_const("mlm.bias", &[c.vocab_size], 0.0);
    init_linear(p, s, "nsp.pooler", d, d);
    init_linear(p, s, "nsp.out", d, 2);
}

/// Which component a backbone parameter belongs to: 0 for embeddings,
/// `i + 1` for layer i, `None` for anything else.
pub fn component_depth(name: &str, prefix: &str) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.starts_with("embeddings.") {
        return Some(0);
    }
    let layer = rest.strip_prefix("layer")?;
    let idx: usize = layer.split('.').next()?.parse().ok()?;
    Some(idx + 1)
}

/// `x·W + b` with `W` and `b` named `{name}.w`, `{name}.b`.
pub fn linear<T: Float>(g: &mut Graph<T>, p: &Params<T>, x: Var, name: &str) -> Result<Var> {
    let w = g.param(p, &format!("{name}.w"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

pub fn layer_norm<T: Float>(g: &mut Graph<T>, p: &Params<T>, x: Var, name: &str) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let gain = g.param(p, &format!("{name}.gain"))?;
    let bias = g.param(p, &format!("{name}.bias"))?;
    let y = g.mul(n, gain)?;
    Ok(g.add(y, bias)?)
}

/// Padded id batch, row-major `[batch × len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// `true` on real tokens.
    pub mask: Vec<bool>,
}

impl EncoderBatch {
    pub fn new(batch: usize, len: usize, ids: Vec<usize>, segments: Vec<usize>, mask: Vec<bool>) -> Result<Self> {
        let n = batch * len;
        if ids.len() != n || segments.len() != n || mask.len() != n {
            return Err(Error::InvalidInput(format!(
                "batch {batch}×{len} needs {n} ids, segments and mask entries"
            )));
        }
        Ok(Self {
            batch,
            len,
            ids,
            segments,
            mask,
        })
    }

    /// Longest row measured to its last real token.
    pub fn used_len(&self) -> usize {
        (0..self.batch)
            .map(|b| {
                self.mask[b * self.len..(b + 1) * self.len]
                    .iter()
                    .rposition(|m| *m)
                    .map_or(0, |p| p + 1)
            })
            .max()
            .unwrap_or(0)
            .max(1)
    }

    /// Drops trailing columns that are padding in every row. Attention masks
    /// padded keys exactly, so outputs at kept positions are unchanged.
    pub fn trimmed(&self) -> EncoderBatch {
        let keep = self.used_len();
        if keep == self.len {
            return self.clone();
        }
        let cut = |v: &[usize]| -> Vec<usize> {
            (0..self.batch).flat_map(|b| v[b * self.len..b * self.len + keep].to_vec()).collect()
        };
        EncoderBatch {
            batch: self.batch,
            len: keep,
            ids: cut(&self.ids),
            segments: cut(&self.segments),
            mask: (0..self.batch)
                .flat_map(|b| self.mask[b * self.len..b * self.len + keep].to_vec())
                .collect(),
        }
    }
}

pub struct EncoderOutput {
    /// `[batch, len, d_model]`
    pub hidden: Var,
    /// Per layer, `[batch, heads, len, len]` attention weights.
    pub attention: Vec<Var>,
}

/// Runs the backbone whose parameters live under `prefix`.
pub fn encode<T: Float>(g: &mut Graph<T>, p: &Params<T>, c: &EncoderConfig, prefix: &str, x: &EncoderBatch) -> Result<EncoderOutput> {
    let (b, l, d) = (x.batch, x.len, c.d_model);
    if l > c.max_len {
        return Err(Error::InvalidInput(format!("sequence length {l} exceeds max_len {}", c.max_len)));
    }
    if let Some(&bad) = x.ids.iter().find(|&&i| i >= c.vocab_size) {
        return Err(Error::IdOutOfRange {
            id: bad,
            size: c.vocab_size,
        });
    }
    if let Some(&bad) = x.segments.iter().find(|&&s| s > 1) {
        return Err(Error::InvalidInput(format!("segment id {bad} is not 0 or 1")));
    }
    let tok = g.param(p, &format!("{prefix}embeddings.token"))?;
    let pos = g.param(p, &format!("{prefix}embeddings.position"))?;
    let seg = g.param(p, &format!("{prefix}embeddings.segment"))?;
    let te = g.embedding(tok, &x.ids, &[b, l])?;
    let positions: Vec<usize> = (0..l).collect();
    let pe = g.embedding(pos, &positions, &[l])?;
    let se = g.embedding(seg, &x.segments, &[b, l])?;
    let h = g.add(te, pe)?;
    let h = g.add(h, se)?;
    let h = layer_norm(g, p, h, &format!("{prefix}embeddings.ln"))?;
    let mut h = g.dropout(h, c.dropout)?;

    let (nh, dh) = (c.heads, c.head_dim());
    let scale = lit::<T>(1.0 / (dh as f64).sqrt());
    let keep: Vec<bool> = (0..b)
        .flat_map(|bi| {
            let row = &x.mask[bi * l..(bi + 1) * l];
            (0..nh * l).flat_map(move |_| row.iter().copied())
        })
        .collect();
    let mut attention = Vec::with_capacity(c.layers);
    for i in 0..c.layers {
        let name = format!("{prefix}layer{i}");
        let split = |g: &mut Graph<T>, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, l, nh, dh])?;
            Ok(g.permute(v, &[0, 2, 1, 3])?)
        };
        let q = linear(g, p, h, &format!("{name}.attn.q"))?;
        let k = linear(g, p, h, &format!("{name}.attn.k"))?;
        let v = linear(g, p, h, &format!("{name}.attn.v"))?;
        let (q, k, v) = (split(g, q)?, split(g, k)?, split(g, v)?);
        let kt = g.transpose(k)?;
        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, scale);
        let probs = g.masked_softmax(scores, &keep)?;
        attention.push(probs);
        let ctx = g.matmul(probs, v)?;
        let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = g.reshape(ctx, &[b, l, d])?;
        let a = linear(g, p, ctx, &format!("{name}.attn.o"))?;
        let a = g.dropout(a, c.dropout)?;
        let r = g.add(h, a)?;
        let h1 = layer_norm(g, p, r, &format!("{name}.ln1"))?;
        let f = linear(g, p, h1, &format!("{name}.ffn.1"))?;
        let f = g.gelu(f);
        let f = linear(g, p, f, &format!("{name}.ffn.2"))?;
        let f = g.dropout(f, c.dropout)?;
        let r = g.add(h1, f)?;
        h = layer_norm(g, p, r, &format!("{name}.ln2"))?;
    }
    Ok(EncoderOutput { hidden: h, attention })
}

/// Rows of `hidden: [batch, len, d]` at flat positions `b * len + i`.
pub fn gather_rows<T: Float>(g: &mut Graph<T>, hidden: Var, rows: &[usize]) -> Result<Var> {
    let s = g.shape(hidden).to_vec();
    let d = *s.last().unwrap();
    let n: usize = s[..s.len() - 1].iter().product();
    let flat = g.reshape(hidden, &[n, d])?;
    Ok(g.embedding(flat, rows, &[rows.len()])?)
}

/// `[CLS]` vectors, `[batch, d]`.
pub fn cls_vectors<T: Float>(g: &mut Graph<T>, hidden: Var) -> Result<Var> {
    let s = g.shape(hidden).to_vec();
    let rows: Vec<usize> = (0..s[0]).map(|b| b * s[1]).collect();
    gather_rows(g, hidden, &rows)
}
