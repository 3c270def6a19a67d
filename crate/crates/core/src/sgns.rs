//! Skip-gram word embeddings trained with negative sampling.

use std::fmt::Write as _;
use std::path::Path;

use ndgrad::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_utf8, Corpus};
use crate::error::{Error, Result};
use crate::rng;
use crate::tokenize::{encode, token_counts, Tokenizer, Vocabulary, NUM_SPECIALS, SPECIAL_TOKENS, UNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub negatives_k: usize,
    /// Half-window in tokens.
    pub window: usize,
    pub epochs: usize,
    /// Start learning rate; decays linearly to `min_lr` over all updates.
    pub lr: f64,
    pub min_lr: f64,
    pub min_count: u64,
    pub unigram_power: f64,
    /// Passes over each training corpus per epoch, in corpus order. Missing
    /// entries default to 1.
    pub corpus_passes: Vec<usize>,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            negatives_k: 5,
            window: 5,
            epochs: 5,
            lr: 0.025,
            min_lr: 1e-4,
            min_count: 1,
            unigram_power: 0.75,
            corpus_passes: Vec::new(),
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("dim", self.dim), ("negatives_k", self.negatives_k), ("window", self.window)] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.lr >= 0.0 && self.min_lr >= 0.0) {
            return Err(Error::config("lr", "learning rates must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub dim: usize,
    /// V×dim, row-major. These are the published vectors.
    pub input: Vec<f32>,
    /// V×dim, training only.
    pub context: Vec<f32>,
}

impl EmbeddingTable {
    /// Input vectors uniform in ±0.5/dim, context vectors zero.
    pub fn init(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let v = vocab.len();
        let bound = 0.5 / dim as f32;
        let mut r = rng::stream(seed, "sgns.input");
        let input = (0..v * dim).map(|_| r.random_range(-bound..bound)).collect();
        Self {
            vocab,
            dim,
            input,
            context: vec![0.0; v * dim],
        }
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn vector(&self, id: usize) -> &[f32] {
        &self.input[id * self.dim..(id + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(&self.context).all(|x| x.is_finite())
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.len() {
            return Err(Error::IdOutOfRange { id, size: self.len() });
        }
        Ok(())
    }

    /// Interchange format: `V D` header, then `token v1 … vD` rows with six
    /// decimals.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.len(), self.dim);
        for (id, tok) in self.vocab.tokens().iter().enumerate() {
            s.push_str(tok);
            for x in self.vector(id) {
                let _ = write!(s, " {x:.6}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "missing `V D` header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(1, format!("malformed header `{header}`")))?;
        let [v, d] = dims[..] else {
            return Err(err(1, format!("malformed header `{header}`")));
        };
        if d == 0 {
            return Err(err(1, "dimension must be at least 1".into()));
        }
        let mut tokens = Vec::with_capacity(v);
        let mut input = Vec::with_capacity(v * d);
        for (i, line) in lines {
            let mut fields = line.split(' ').filter(|f| !f.is_empty());
            let tok = fields.next().unwrap_or_default();
            let vals: Vec<f32> = fields
                .map(|f| f.parse::<f32>().map_err(|_| err(i + 1, format!("non-numeric field `{f}`"))))
                .collect::<Result<_>>()?;
            if vals.len() != d {
                return Err(err(i + 1, format!("expected {d} values, found {}", vals.len())));
            }
            tokens.push(tok.to_string());
            input.extend(vals);
        }
        if tokens.len() != v {
            return Err(err(1, format!("header declares {v} rows, file has {}", tokens.len())));
        }
        if tokens.len() < NUM_SPECIALS || tokens[..NUM_SPECIALS] != SPECIAL_TOKENS {
            return Err(err(2, "the first rows must be the special tokens".into()));
        }
        let vocab = Vocabulary::from_tokens(tokens.into_iter().skip(NUM_SPECIALS))?;
        Ok(Self {
            vocab,
            dim: d,
            input,
            context: vec![0.0; v * d],
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_utf8(path)?, path)
    }
}

/// `(center, context)` pairs: position i ascending, then j ascending, for
/// every j ≠ i within `window` of i.
pub fn generate_pairs(ids: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..ids.len() {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(ids.len() - 1);
        for j in lo..=hi {
            if j != i {
                out.push((ids[i], ids[j]));
            }
        }
    }
    out
}

/// Draws token ids with probability ∝ count^power. Specials never appear.
#[derive(Clone, Debug)]
pub struct NegSampler {
    cdf: Vec<f64>,
}

impl NegSampler {
    /// `counts[id]` is the frequency of token `id` in the training stream.
    pub fn new(counts: &[u64], power: f64) -> Result<Self> {
        let weights: Vec<f64> = counts
            .iter()
            .enumerate()
            .map(|(id, &c)| if id < NUM_SPECIALS || c == 0 { 0.0 } else { (c as f64).powf(power) })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidInput("negative sampler needs at least one non-special token".into()));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        // guard against rounding in the last bucket
        let top = weights.iter().rposition(|w| *w > 0.0).unwrap();
        for c in &mut cdf[top..] {
            *c = 1.0;
        }
        Ok(Self { cdf })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cdf
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }

    /// `k` draws, redrawing any that equal `exclude`.
    pub fn sample<R: Rng>(&self, rng: &mut R, k: usize, exclude: usize) -> Result<Vec<usize>> {
        let probs = self.probabilities();
        let other_mass: f64 = probs.iter().enumerate().filter(|(i, _)| *i != exclude).map(|(_, p)| p).sum();
        if other_mass <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "degenerate vocabulary: no eligible negative other than id {exclude}"
            )));
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let id = self.draw(rng);
            if id != exclude {
                out.push(id);
            }
        }
        Ok(out)
    }
}

fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (x, y)| s + *x * *y)
}

fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `-log σ(x)` computed without overflow.
fn neg_log_sigmoid<T: Float>(x: T) -> T {
    if x > T::zero() {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// `−log σ(u_ctx·v) − Σ_n log σ(−u_n·v)`.
pub fn sgns_loss<T: Float>(center: &[T], context: &[T], negatives: &[&[T]]) -> T {
    let mut l = neg_log_sigmoid(dot(context, center));
    for u in negatives {
        l += neg_log_sigmoid(-dot(u, center));
    }
    l
}

pub struct SgnsGradients<T> {
    pub center: Vec<T>,
    pub context: Vec<T>,
    pub negatives: Vec<Vec<T>>,
}

pub fn sgns_gradients<T: Float>(center: &[T], context: &[T], negatives: &[&[T]]) -> SgnsGradients<T> {
    let gp = sigmoid(dot(context, center)) - T::one();
    let mut g_center: Vec<T> = context.iter().map(|u| gp * *u).collect();
    let g_context = center.iter().map(|v| gp * *v).collect();
    let mut g_negs = Vec::with_capacity(negatives.len());
    for u in negatives {
        let gn = sigmoid(dot(u, center));
        for (g, x) in g_center.iter_mut().zip(u.iter()) {
            *g += gn * *x;
        }
        g_negs.push(center.iter().map(|v| gn * *v).collect());
    }
    SgnsGradients {
        center: g_center,
        context: g_context,
        negatives: g_negs,
    }
}

/// One SGD step on a single (center, context, negatives) triple. Returns the
/// loss before the update. Gradients all use pre-update values; a repeated
/// negative accumulates.
pub fn sgns_step(table: &mut EmbeddingTable, center: usize, context: usize, negatives: &[usize], lr: f32) -> Result<f32> {
    table.check_id(center)?;
    table.check_id(context)?;
    for &n in negatives {
        table.check_id(n)?;
    }
    let d = table.dim;
    let v = table.vector(center).to_vec();
    let ctx = table.context[context * d..(context + 1) * d].to_vec();
    let negs: Vec<Vec<f32>> = negatives.iter().map(|&n| table.context[n * d..(n + 1) * d].to_vec()).collect();
    let neg_refs: Vec<&[f32]> = negs.iter().map(Vec::as_slice).collect();
    let loss = sgns_loss(&v, &ctx, &neg_refs);
    let g = sgns_gradients(&v, &ctx, &neg_refs);
    for (x, gx) in table.input[center * d..(center + 1) * d].iter_mut().zip(&g.center) {
        *x -= lr * gx;
    }
    for (x, gx) in table.context[context * d..(context + 1) * d].iter_mut().zip(&g.context) {
        *x -= lr * gx;
    }
    for (&n, gn) in negatives.iter().zip(&g.negatives) {
        for (x, gx) in table.context[n * d..(n + 1) * d].iter_mut().zip(gn) {
            *x -= lr * gx;
        }
    }
    Ok(loss)
}

/// Trained table plus the mean loss of each epoch.
#[derive(Clone, Debug)]
pub struct EmbeddingRun {
    pub table: EmbeddingTable,
    pub epoch_losses: Vec<f64>,
}

/// Trains on the concatenated token streams of `corpora` (each repeated per
/// `config.corpus_passes`). Unknown tokens are dropped from the stream.
pub fn train_embeddings(corpora: &[&Corpus], tokenizer: &Tokenizer, vocab: &Vocabulary, config: &EmbeddingConfig) -> Result<EmbeddingRun> {
    config.validate()?;
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::Empty("embedding training corpus"));
    }
    let mut pairs = Vec::new();
    let mut counts = vec![0u64; vocab.len()];
    for (ci, corpus) in corpora.iter().enumerate() {
        let passes = config.corpus_passes.get(ci).copied().unwrap_or(1);
        for line in &corpus.lines {
            let ids: Vec<usize> = encode(&tokenizer.tokenize(line), vocab).into_iter().filter(|&i| i != UNK).collect();
            let line_pairs = generate_pairs(&ids, config.window);
            for _ in 0..passes {
                for &i in &ids {
                    counts[i] += 1;
                }
                pairs.extend_from_slice(&line_pairs);
            }
        }
    }
    let mut table = EmbeddingTable::init(vocab.clone(), config.dim, config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    if config.epochs == 0 || pairs.is_empty() {
        return Ok(EmbeddingRun { table, epoch_losses });
    }
    let sampler = NegSampler::new(&counts, config.unigram_power)?;
    let mut shuffle_rng = rng::stream(config.seed, "shuffle");
    let mut neg_rng = rng::stream(config.seed, "sgns.negatives");
    let total = (config.epochs * pairs.len()) as f64;
    let end_lr = config.min_lr.min(config.lr);
    let mut done = 0usize;
    for _ in 0..config.epochs {
        pairs.shuffle(&mut shuffle_rng);
        let mut sum = 0.0f64;
        for &(c, o) in &pairs {
            let lr = config.lr + (end_lr - config.lr) * (done as f64 / total);
            let negs = sampler.sample(&mut neg_rng, config.negatives_k, o)?;
            sum += sgns_step(&mut table, c, o, &negs, lr as f32)? as f64;
            done += 1;
        }
        let mean = sum / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("embedding loss became {mean}")));
        }
        epoch_losses.push(mean);
    }
    Ok(EmbeddingRun { table, epoch_losses })
}

/// Token frequencies of the training stream, indexed by vocabulary id.
pub fn stream_counts(corpora: &[&Corpus], tokenizer: &Tokenizer, vocab: &Vocabulary) -> Vec<u64> {
    let counts = token_counts(corpora.iter().flat_map(|c| c.lines.iter()), tokenizer);
    let mut out = vec![0; vocab.len()];
    for (t, c) in counts {
        if let Some(id) = vocab.id(&t) {
            out[id] += c;
        }
    }
    out
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// Top-`k` tokens by cosine similarity to `token`, excluding the query and
/// the special tokens. Ties go to the lower id.
pub fn nearest_neighbors(table: &EmbeddingTable, token: &str, k: usize) -> Result<Vec<(String, f64)>> {
    let q = table.vocab.id(token).ok_or_else(|| Error::OutOfVocabulary(token.to_string()))?;
    let qv = table.vector(q);
    let mut scored: Vec<(usize, f64)> = (NUM_SPECIALS..table.len())
        .filter(|&id| id != q)
        .map(|id| (id, cosine(qv, table.vector(id))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(id, c)| (table.vocab.token(id).unwrap().to_string(), c))
        .collect())
}
