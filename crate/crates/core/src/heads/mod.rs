//! Task models: seven text-classification kinds and five tagging kinds over
//! static embeddings or the pretrained encoder, plus fine-tuning.

pub mod crf;
mod finetune;
mod lstm;
mod ner;
mod tc;

pub use finetune::{evaluate_model, fine_tune, predict_ner, predict_tc, train_model, EncodedData, TrainParams, TrainedModel};
pub use ner::{ner_emissions, ner_loss};
pub use tc::tc_forward;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndgrad::{Float, Params, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Manifest};
use crate::encoder::{component_depth, init_encoder_params, EncoderBatch, EncoderCheckpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::labels::{NerLabelSet, TcLabelSet};
use crate::metrics::TaskKind;
use crate::sgns::EmbeddingTable;
use crate::tokenize::{Vocabulary, CLS, NUM_SPECIALS, PAD, SEP};

pub(crate) const ENCODER_PREFIX: &str = "encoder.";
pub(crate) const EMBED_TABLE: &str = "embed.table";
/// Per-word character ids for the character CNN; a lookup buffer, never trained.
pub(crate) const CHAR_IDS: &str = "char.ids";
const CHAR_UNK: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TcKind {
    TextCnn,
    TextRnn,
    TextRnnAtt,
    TextRcnn,
    Dpcnn,
    TransformerCls,
    EncoderFt,
}

impl TcKind {
    pub const ALL: [TcKind; 7] = [
        TcKind::TextCnn,
        TcKind::TextRnn,
        TcKind::TextRnnAtt,
        TcKind::TextRcnn,
        TcKind::Dpcnn,
        TcKind::TransformerCls,
        TcKind::EncoderFt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TcKind::TextCnn => "text_cnn",
            TcKind::TextRnn => "text_rnn",
            TcKind::TextRnnAtt => "text_rnn_att",
            TcKind::TextRcnn => "text_rcnn",
            TcKind::Dpcnn => "dpcnn",
            TcKind::TransformerCls => "transformer_cls",
            TcKind::EncoderFt => "encoder_ft",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NerKind {
    Lstm,
    Bilstm,
    BilstmCrf,
    BilstmCnnCrf,
    EncoderTokenFt,
}

impl NerKind {
    pub const ALL: [NerKind; 5] = [
        NerKind::Lstm,
        NerKind::Bilstm,
        NerKind::BilstmCrf,
        NerKind::BilstmCnnCrf,
        NerKind::EncoderTokenFt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NerKind::Lstm => "lstm",
            NerKind::Bilstm => "bilstm",
            NerKind::BilstmCrf => "bilstm_crf",
            NerKind::BilstmCnnCrf => "bilstm_cnn_crf",
            NerKind::EncoderTokenFt => "encoder_token_ft",
        }
    }

    pub fn has_crf(self) -> bool {
        matches!(self, NerKind::BilstmCrf | NerKind::BilstmCnnCrf)
    }
}

/// A task model kind, written `tc/<kind>` or `ner/<kind>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelKind {
    Tc(TcKind),
    Ner(NerKind),
}

impl ModelKind {
    pub fn task(self) -> TaskKind {
        match self {
            ModelKind::Tc(_) => TaskKind::Tc,
            ModelKind::Ner(_) => TaskKind::Ner,
        }
    }

    /// Kinds whose backbone is the transformer encoder.
    pub fn uses_encoder(self) -> bool {
        matches!(
            self,
            ModelKind::Tc(TcKind::TransformerCls | TcKind::EncoderFt) | ModelKind::Ner(NerKind::EncoderTokenFt)
        )
    }

    pub fn has_crf(self) -> bool {
        matches!(self, ModelKind::Ner(k) if k.has_crf())
    }

    /// Kinds that can only start from a pretrained encoder checkpoint.
    pub fn needs_checkpoint(self) -> bool {
        matches!(self, ModelKind::Tc(TcKind::EncoderFt) | ModelKind::Ner(NerKind::EncoderTokenFt))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tc(k) => k.as_str(),
            ModelKind::Ner(k) => k.as_str(),
        }
    }

    pub fn num_outputs(self) -> usize {
        match self {
            ModelKind::Tc(_) => TcLabelSet::new().len(),
            ModelKind::Ner(_) => NerLabelSet::NUM_TAGS,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.task().as_str(), self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || Error::config("model.kind", format!("unknown model kind `{s}`"));
        let (task, kind) = s.split_once('/').ok_or_else(unknown)?;
        match task {
            "tc" => TcKind::ALL.into_iter().find(|k| k.as_str() == kind).map(ModelKind::Tc),
            "ner" => NerKind::ALL.into_iter().find(|k| k.as_str() == kind).map(ModelKind::Ner),
            _ => None,
        }
        .ok_or_else(unknown)
    }
}

impl TryFrom<String> for ModelKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelKind> for String {
    fn from(k: ModelKind) -> String {
        k.to_string()
    }
}

/// Architecture hyperparameters shared by all kinds; each kind reads the
/// fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Label of the initialization (embedding source or checkpoint name).
    pub source: String,
    /// Token slots per input row.
    pub padding: usize,
    /// Static embedding width; the table's width when one is supplied.
    pub embed_dim: usize,
    pub vocab_size: usize,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    pub filters: usize,
    pub widths: Vec<usize>,
    pub attention_dim: usize,
    pub dropout: f64,
    pub freeze_embeddings: bool,
    /// Backbone components below this depth are frozen: 0 is the embedding
    /// block, `i + 1` is encoder layer i.
    pub freeze_depth: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    /// Character inventory for the character CNN; empty in char mode.
    pub chars: Vec<char>,
    pub max_word_chars: usize,
    /// Backbone shape for encoder kinds.
    pub encoder: Option<EncoderConfig>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Tc(TcKind::TextCnn),
            source: "random".into(),
            padding: 64,
            embed_dim: 64,
            vocab_size: 0,
            hidden: 64,
            filters: 32,
            widths: vec![2, 3, 4],
            attention_dim: 64,
            dropout: 0.1,
            freeze_embeddings: false,
            freeze_depth: 0,
            char_dim: 16,
            char_filters: 16,
            char_window: 3,
            chars: Vec::new(),
            max_word_chars: 12,
            encoder: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.padding", self.padding),
            ("model.embed_dim", self.embed_dim),
            ("model.hidden", self.hidden),
            ("model.filters", self.filters),
            ("model.attention_dim", self.attention_dim),
            ("model.char_dim", self.char_dim),
            ("model.char_filters", self.char_filters),
            ("model.char_window", self.char_window),
            ("model.max_word_chars", self.max_word_chars),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("model.widths", "needs at least one positive width"));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w > self.padding) {
            return Err(Error::config("model.widths", format!("width {w} exceeds padding {}", self.padding)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("model.dropout", "must lie in [0, 1)"));
        }
        if self.kind.uses_encoder() {
            let e = self
                .encoder
                .as_ref()
                .ok_or_else(|| Error::config("model.encoder", format!("{} needs an encoder shape", self.kind)))?;
            if self.padding < 3 || self.padding > e.max_len {
                return Err(Error::config(
                    "model.padding",
                    format!("padding {} must lie in 3..={} (encoder max_len)", self.padding, e.max_len),
                ));
            }
        }
        Ok(())
    }

    /// Real tokens kept per row; encoder kinds spend two slots on `[CLS]` and `[SEP]`.
    pub fn capacity(&self) -> usize {
        if self.kind.uses_encoder() {
            self.padding - 2
        } else {
            self.padding
        }
    }

    pub(crate) fn char_cnn(&self) -> bool {
        self.kind == ModelKind::Ner(NerKind::BilstmCnnCrf) && !self.chars.is_empty()
    }

    pub(crate) fn encoder_config(&self) -> Result<&EncoderConfig> {
        self.encoder
            .as_ref()
            .ok_or_else(|| Error::config("model.encoder", format!("{} needs an encoder shape", self.kind)))
    }

    /// Stride-2 pooling stages until the sequence is at most 2 long.
    pub(crate) fn dpcnn_blocks(&self) -> usize {
        let mut l = self.padding;
        let mut n = 0;
        while l > 2 {
            l = if l <= 3 { 1 } else { (l - 3).div_ceil(2) + 1 };
            n += 1;
        }
        n
    }
}

/// Where a model's initial weights come from.
#[derive(Clone, Copy, Debug)]
pub enum Init<'a> {
    Random,
    Table(&'a EmbeddingTable),
    Encoder(&'a EncoderCheckpoint),
}

/// A task model: configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskModel {
    pub config: ModelConfig,
    pub params: Params<f32>,
    pub vocab_fingerprint: String,
}

fn init_dense<T: Float>(p: &mut Params<T>, seed: u64, name: &str, shape: &[usize], fan_in: usize, fan_out: usize) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    p.init_uniform(seed, name, shape, bound);
}

pub(crate) fn init_linear<T: Float>(p: &mut Params<T>, seed: u64, name: &str, d_in: usize, d_out: usize) {
    init_dense(p, seed, &format!("{name}.w"), &[d_in, d_out], d_in, d_out);
    p.init_const(&format!("{name}.b"), &[d_out], 0.0);
}

pub(crate) fn init_conv<T: Float>(p: &mut Params<T>, seed: u64, name: &str, width: usize, c_in: usize, c_out: usize) {
    init_dense(p, seed, &format!("{name}.w"), &[width, c_in, c_out], width * c_in, c_out);
    p.init_const(&format!("{name}.b"), &[c_out], 0.0);
}

impl TaskModel {
    /// Builds the model for `vocab`. Every weight is drawn from a stream
    /// named after it, so two models that differ only in `init` agree on all
    /// non-embedding weights.
    pub fn build(mut config: ModelConfig, init: Init<'_>, vocab: &Vocabulary) -> Result<Self> {
        let kind = config.kind;
        config.vocab_size = vocab.len();
        match init {
            Init::Encoder(ck) => {
                if !kind.needs_checkpoint() {
                    return Err(Error::config("model.init", format!("{kind} does not start from a checkpoint")));
                }
                ck.check_vocab(vocab)?;
                let mut e = ck.config.clone();
                e.seed = config.seed;
                config.encoder = Some(e);
            }
            Init::Table(t) => {
                if kind.needs_checkpoint() {
                    return Err(Error::config("model.init", format!("{kind} needs an encoder checkpoint")));
                }
                let found = t.vocab.fingerprint();
                if found != vocab.fingerprint() {
                    return Err(Error::FingerprintMismatch {
                        expected: vocab.fingerprint(),
                        found,
                    });
                }
                config.embed_dim = t.dim;
            }
            Init::Random if kind.needs_checkpoint() => {
                return Err(Error::config("model.init", format!("{kind} needs an encoder checkpoint")));
            }
            Init::Random => {}
        }
        if kind == ModelKind::Tc(TcKind::TransformerCls) {
            let d = config.embed_dim;
            let prev = config.encoder.take().unwrap_or_default();
            let heads = if d % prev.heads == 0 { prev.heads } else { 1 };
            config.encoder = Some(EncoderConfig {
                d_model: d,
                heads,
                d_ff: 4 * d,
                max_len: config.padding.max(prev.max_len),
                vocab_size: vocab.len(),
                seed: config.seed,
                ..prev
            });
        }
        config.validate()?;

        let (s, v, c) = (config.seed, vocab.len(), kind.num_outputs());
        let mut p = Params::new();
        match kind {
            ModelKind::Tc(TcKind::TransformerCls | TcKind::EncoderFt) | ModelKind::Ner(NerKind::EncoderTokenFt) => {
                let e = config.encoder_config()?.clone();
                init_encoder_params(&mut p, &e, ENCODER_PREFIX);
                init_linear(&mut p, s, "out", e.d_model, c);
            }
            _ => {
                let e = config.embed_dim;
                p.init_normal(s, EMBED_TABLE, &[v, e], 1.0 / (e as f64).sqrt());
                let (h, f) = (config.hidden, config.filters);
                match kind {
                    ModelKind::Tc(TcKind::TextCnn) => {
                        for &w in &config.widths {
                            init_conv(&mut p, s, &format!("conv{w}"), w, e, f);
                        }
                        init_linear(&mut p, s, "out", f * config.widths.len(), c);
                    }
                    ModelKind::Tc(TcKind::TextRnn) => {
                        init_bilstm(&mut p, s, e, h);
                        init_linear(&mut p, s, "out", 2 * h, c);
                    }
                    ModelKind::Tc(TcKind::TextRnnAtt) => {
                        init_bilstm(&mut p, s, e, h);
                        init_linear(&mut p, s, "att.proj", 2 * h, config.attention_dim);
                        init_dense(&mut p, s, "att.query", &[config.attention_dim, 1], config.attention_dim, 1);
                        init_linear(&mut p, s, "out", 2 * h, c);
                    }
                    ModelKind::Tc(TcKind::TextRcnn) => {
                        init_bilstm(&mut p, s, e, h);
                        init_linear(&mut p, s, "proj", 2 * h + e, h);
                        init_linear(&mut p, s, "out", h, c);
                    }
                    ModelKind::Tc(TcKind::Dpcnn) => {
                        init_conv(&mut p, s, "region", 3, e, f);
                        for i in 0..=config.dpcnn_blocks() {
                            init_conv(&mut p, s, &format!("block{i}.conv1"), 3, f, f);
                            init_conv(&mut p, s, &format!("block{i}.conv2"), 3, f, f);
                        }
                        init_linear(&mut p, s, "out", f, c);
                    }
                    ModelKind::Ner(NerKind::Lstm) => {
                        lstm::init_lstm(&mut p, s, "rnn.fwd", e, h);
                        init_linear(&mut p, s, "out", h, c);
                    }
                    ModelKind::Ner(k) => {
                        let mut input = e;
                        if k == NerKind::BilstmCnnCrf && !config.chars.is_empty() {
                            let cd = config.char_dim;
                            p.init_normal(s, "char.table", &[config.chars.len() + 2, cd], 1.0 / (cd as f64).sqrt());
                            init_conv(&mut p, s, "char.conv", config.char_window, cd, config.char_filters);
                            p.insert(CHAR_IDS, char_id_table(&config, vocab));
                            input += config.char_filters;
                        }
                        init_bilstm(&mut p, s, input, h);
                        init_linear(&mut p, s, "out", 2 * h, c);
                    }
                    _ => unreachable!("encoder kinds handled above"),
                }
            }
        }
        if kind.has_crf() {
            p.init_const("crf.transitions", &[c, c], 0.0);
            p.init_const("crf.start", &[c], 0.0);
            p.init_const("crf.end", &[c], 0.0);
        }

        match init {
            Init::Table(t) => {
                // transformer_cls keeps its token embeddings inside the encoder.
                let name = if kind == ModelKind::Tc(TcKind::TransformerCls) {
                    format!("{ENCODER_PREFIX}embeddings.token")
                } else {
                    EMBED_TABLE.to_string()
                };
                p.assign(&name, Tensor::new(vec![t.len(), t.dim], t.input.clone())?)?;
            }
            Init::Encoder(ck) => {
                for (name, t) in ck.params.iter() {
                    if component_depth(name, "").is_some() {
                        p.assign(&format!("{ENCODER_PREFIX}{name}"), t.clone())?;
                    }
                }
            }
            Init::Random => {}
        }
        Ok(Self {
            config,
            params: p,
            vocab_fingerprint: vocab.fingerprint(),
        })
    }

    /// Whether the optimizer updates `name`.
    pub fn is_trainable(&self, name: &str) -> bool {
        let c = &self.config;
        if name == CHAR_IDS {
            return false;
        }
        let depth = if name == EMBED_TABLE {
            Some(0)
        } else {
            component_depth(name, ENCODER_PREFIX)
        };
        match depth {
            Some(0) if c.freeze_embeddings => false,
            Some(d) => d >= c.freeze_depth,
            None => true,
        }
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

    pub fn save(&self, dir: impl AsRef<Path>, extra: serde_json::Value) -> Result<()> {
        let config = serde_json::to_value(&self.config).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut m = Manifest::new(&self.config.kind.to_string(), config, &self.vocab_fingerprint);
        m.extra = extra;
        write_checkpoint(dir, m, &self.params)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, serde_json::Value)> {
        let (m, params) = read_checkpoint(dir)?;
        let kind: ModelKind = m.kind.parse()?;
        let config: ModelConfig =
            serde_json::from_value(m.config).map_err(|e| Error::config("manifest.config", e.to_string()))?;
        if config.kind != kind {
            return Err(Error::InvalidInput(format!("manifest kind {kind} disagrees with config kind {}", config.kind)));
        }
        Ok((
            Self {
                config,
                params,
                vocab_fingerprint: m.vocab_fingerprint,
            },
            m.extra,
        ))
    }
}

fn init_bilstm<T: Float>(p: &mut Params<T>, seed: u64, input: usize, hidden: usize) {
    lstm::init_lstm(p, seed, "rnn.fwd", input, hidden);
    lstm::init_lstm(p, seed, "rnn.bwd", input, hidden);
}

/// `[V, max_word_chars]` character ids of every vocabulary entry: 0 pads,
/// 1 marks characters outside the inventory and the special tokens.
fn char_id_table<T: Float>(config: &ModelConfig, vocab: &Vocabulary) -> Tensor<T> {
    let w = config.max_word_chars;
    let mut data = vec![T::zero(); vocab.len() * w];
    for (id, tok) in vocab.tokens().iter().enumerate() {
        let row = &mut data[id * w..(id + 1) * w];
        if id < NUM_SPECIALS {
            if id != PAD {
                row[0] = T::from_usize(CHAR_UNK).unwrap();
            }
            continue;
        }
        for (slot, ch) in row.iter_mut().zip(tok.chars()) {
            let c = config.chars.binary_search(&ch).map_or(CHAR_UNK, |i| i + 2);
            *slot = T::from_usize(c).unwrap();
        }
    }
    Tensor::new(vec![vocab.len(), w], data).unwrap()
}

/// Character inventory of the non-special vocabulary entries, sorted.
pub fn char_inventory(vocab: &Vocabulary) -> Vec<char> {
    let mut chars: Vec<char> = vocab.tokens()[NUM_SPECIALS..].iter().flat_map(|t| t.chars()).collect();
    chars.sort_unstable();
    chars.dedup();
    chars
}

/// Padded token-id batch, row-major `[batch × len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<usize>,
    /// Real (unpadded) tokens per row.
    pub lens: Vec<usize>,
}

impl TokenBatch {
    /// Truncates or pads every sequence to exactly `len` slots.
    pub fn pad(seqs: &[&[usize]], len: usize) -> Self {
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut lens = Vec::with_capacity(seqs.len());
        for s in seqs {
            let n = s.len().min(len);
            ids.extend_from_slice(&s[..n]);
            ids.resize(ids.len() + len - n, PAD);
            lens.push(n);
        }
        Self {
            batch: seqs.len(),
            len,
            ids,
            lens,
        }
    }

    pub fn new(batch: usize, len: usize, ids: Vec<usize>, lens: Vec<usize>) -> Result<Self> {
        if ids.len() != batch * len || lens.len() != batch || lens.iter().any(|&n| n > len) {
            return Err(Error::InvalidInput(format!(
                "unpadded batch: {} ids and {} lengths for {batch}×{len}",
                ids.len(),
                lens.len()
            )));
        }
        Ok(Self { batch, len, ids, lens })
    }

    pub(crate) fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.len != config.padding || self.ids.len() != self.batch * self.len || self.lens.len() != self.batch {
            return Err(Error::InvalidInput(format!(
                "unpadded batch: rows of {} slots, model expects {}",
                self.len, config.padding
            )));
        }
        if self.batch == 0 {
            return Err(Error::Empty("batch"));
        }
        if let Some(&bad) = self.ids.iter().find(|&&i| i >= config.vocab_size) {
            return Err(Error::IdOutOfRange {
                id: bad,
                size: config.vocab_size,
            });
        }
        Ok(())
    }

    pub(crate) fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.len..b * self.len + self.lens[b]]
    }

    /// Longest real row, at least 1.
    pub(crate) fn used_len(&self) -> usize {
        self.lens.iter().copied().max().unwrap_or(0).max(1)
    }

    /// The first `keep` columns with their validity mask.
    pub(crate) fn columns(&self, keep: usize) -> (Vec<usize>, Vec<bool>) {
        let mut ids = Vec::with_capacity(self.batch * keep);
        let mut mask = Vec::with_capacity(self.batch * keep);
        for b in 0..self.batch {
            ids.extend_from_slice(&self.ids[b * self.len..b * self.len + keep]);
            mask.extend((0..keep).map(|i| i < self.lens[b]));
        }
        (ids, mask)
    }

    /// `[CLS] tokens [SEP]` rows for the encoder, keeping at most `len - 2`
    /// tokens each, trimmed to the longest row.
    pub(crate) fn framed(&self) -> Result<EncoderBatch> {
        let cap = self.len - 2;
        let mut ids = Vec::with_capacity(self.batch * self.len);
        let mut mask = Vec::with_capacity(self.batch * self.len);
        for b in 0..self.batch {
            let row = self.row(b);
            let row = &row[..row.len().min(cap)];
            ids.push(CLS);
            ids.extend_from_slice(row);
            ids.push(SEP);
            mask.resize(mask.len() + row.len() + 2, true);
            ids.resize((b + 1) * self.len, PAD);
            mask.resize((b + 1) * self.len, false);
        }
        Ok(EncoderBatch::new(self.batch, self.len, ids, vec![0; self.batch * self.len], mask)?.trimmed())
    }
}
