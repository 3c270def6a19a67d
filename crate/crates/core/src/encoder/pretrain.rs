use ndgrad::{Float, Graph, Optimizer, Params, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cls_vectors, encode, gather_rows, layer_norm, linear, make_mlm_example, EncoderBatch, EncoderCheckpoint, EncoderConfig, MlmExample, NspSampler};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::rng;
use crate::tokenize::{encode as encode_tokens, Tokenizer, Vocabulary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub mask_prob: f64,
    /// Steps per history interval.
    pub log_every: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            lr: 1e-3,
            batch_size: 8,
            mask_prob: 0.15,
            log_every: 50,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    /// Domain further-pretraining defaults: lr 5e-5, batch 4.
    pub fn further(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            lr: 5e-5,
            batch_size: 4,
            seed,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("pretrain.batch_size", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::config("pretrain.mask_prob", "must lie in [0, 1]"));
        }
        if !(self.lr >= 0.0) {
            return Err(Error::config("pretrain.lr", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub corpus: String,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Mean total loss of the last interval; `None` when no step ran.
    pub final_mean_loss: Option<f64>,
    /// Mean total (MLM + NSP) loss per logging interval.
    pub interval_losses: Vec<f64>,
    /// Mean MLM loss per logging interval (`None` if nothing was masked).
    pub interval_mlm_losses: Vec<Option<f64>>,
}

/// Tokenized lines of a corpus as vocabulary ids.
pub fn encode_lines(corpus: &Corpus, tokenizer: &Tokenizer, vocab: &Vocabulary) -> Vec<Vec<usize>> {
    corpus.lines.iter().map(|l| encode_tokens(&tokenizer.tokenize(l), vocab)).collect()
}

fn batch_of(examples: &[MlmExample]) -> Result<EncoderBatch> {
    let l = examples[0].input_ids.len();
    let b = examples.len();
    let mut ids = Vec::with_capacity(b * l);
    let mut segs = Vec::with_capacity(b * l);
    let mut mask = Vec::with_capacity(b * l);
    for e in examples {
        ids.extend_from_slice(&e.input_ids);
        segs.extend_from_slice(&e.segment_ids);
        mask.extend_from_slice(&e.attention_mask);
    }
    Ok(EncoderBatch::new(b, l, ids, segs, mask)?.trimmed())
}

pub struct PretrainLoss {
    pub total: Var,
    /// Absent when no position in the batch was selected.
    pub mlm: Option<Var>,
    pub nsp: Var,
    pub masked: usize,
}

/// MLM cross-entropy at the masked positions plus NSP cross-entropy from
/// the `[CLS]` vector.
pub fn pretrain_loss<T: Float>(g: &mut Graph<T>, p: &Params<T>, c: &EncoderConfig, examples: &[MlmExample]) -> Result<PretrainLoss> {
    if examples.is_empty() {
        return Err(Error::Empty("pretraining batch"));
    }
    let x = batch_of(examples)?;
    let hidden = encode(g, p, c, "", &x)?.hidden;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (b, e) in examples.iter().enumerate() {
        for (&pos, &orig) in e.masked_positions.iter().zip(&e.original_ids) {
            rows.push(b * x.len + pos);
            targets.push(Some(orig));
        }
    }
    let mlm = if rows.is_empty() {
        None
    } else {
        let h = gather_rows(g, hidden, &rows)?;
        let logits = mlm_logits(g, p, h)?;
        Some(g.cross_entropy(logits, &targets)?)
    };
    let cls = cls_vectors(g, hidden)?;
    let pooled = linear(g, p, cls, "nsp.pooler")?;
    let pooled = g.tanh(pooled);
    let nsp_logits = linear(g, p, pooled, "nsp.out")?;
    let nsp_targets: Vec<Option<usize>> = examples.iter().map(|e| Some(usize::from(!e.is_next))).collect();
    let nsp = g.cross_entropy(nsp_logits, &nsp_targets)?;
    let total = match mlm {
        Some(m) => g.add(m, nsp)?,
        None => nsp,
    };
    Ok(PretrainLoss {
        total,
        mlm,
        nsp,
        masked: rows.len(),
    })
}

/// Vocabulary logits for hidden rows `[n, d]`; the output projection is the
/// transposed token embedding.
pub(crate) fn mlm_logits<T: Float>(g: &mut Graph<T>, p: &Params<T>, h: Var) -> Result<Var> {
    let t = linear(g, p, h, "mlm.transform")?;
    let t = g.gelu(t);
    let t = layer_norm(g, p, t, "mlm.ln")?;
    let emb = g.param(p, "embeddings.token")?;
    let et = g.transpose(emb)?;
    let logits = g.matmul(t, et)?;
    let bias = g.param(p, "mlm.bias")?;
    Ok(g.add(logits, bias)?)
}

fn sample_examples<R: Rng>(
    lines: &[Vec<usize>],
    nsp: &NspSampler,
    n: usize,
    c: &EncoderConfig,
    mask_prob: f64,
    pair_rng: &mut R,
    mask_rng: &mut R,
) -> Result<Vec<MlmExample>> {
    (0..n)
        .map(|_| {
            let (a, b, is_next) = nsp.sample(pair_rng);
            make_mlm_example(&lines[a], &lines[b], is_next, c.vocab_size, c.max_len, mask_prob, mask_rng)
        })
        .collect()
}

fn step_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(step as u64)
}

fn run_steps(ckpt: &mut EncoderCheckpoint, lines: &[Vec<usize>], tag: &str, pc: &PretrainConfig) -> Result<()> {
    pc.validate()?;
    let mut entry = HistoryEntry {
        corpus: tag.to_string(),
        steps: pc.steps,
        lr: pc.lr,
        batch_size: pc.batch_size,
        final_mean_loss: None,
        interval_losses: Vec::new(),
        interval_mlm_losses: Vec::new(),
    };
    if pc.steps > 0 {
        let nsp = NspSampler::new(lines.len())?;
        let mut pair_rng = rng::stream(pc.seed, "nsp");
        let mut mask_rng = rng::stream(pc.seed, "mask");
        let mut opt = Optimizer::adam(pc.lr, &ckpt.params);
        let every = pc.log_every.max(1);
        let (mut sum, mut mlm_sum, mut mlm_n, mut n) = (0.0, 0.0, 0usize, 0usize);
        for step in 0..pc.steps {
            let ex = sample_examples(lines, &nsp, pc.batch_size, &ckpt.config, pc.mask_prob, &mut pair_rng, &mut mask_rng)?;
            let mut g = Graph::training(step_seed(pc.seed, step));
            let loss = pretrain_loss(&mut g, &ckpt.params, &ckpt.config, &ex)?;
            let l = g.value(loss.total).item() as f64;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("pretraining loss became {l} at step {step}")));
            }
            sum += l;
            n += 1;
            if let Some(m) = loss.mlm {
                mlm_sum += g.value(m).item() as f64;
                mlm_n += 1;
            }
            g.backward(loss.total)?;
            let mut grads = g.param_grads();
            // A batch with nothing masked leaves the MLM head without a gradient.
            for (name, t) in ckpt.params.iter() {
                grads.entry(name.clone()).or_insert_with(|| Tensor::zeros(t.shape()));
            }
            opt.step(&mut ckpt.params, &grads)?;
            if (step + 1) % every == 0 || step + 1 == pc.steps {
                entry.interval_losses.push(sum / n as f64);
                entry.interval_mlm_losses.push((mlm_n > 0).then(|| mlm_sum / mlm_n as f64));
                (sum, mlm_sum, mlm_n, n) = (0.0, 0.0, 0, 0);
            }
        }
        entry.final_mean_loss = entry.interval_losses.last().copied();
    }
    ckpt.history.push(entry);
    Ok(())
}

/// Pretrains a freshly initialized encoder on `corpus` with MLM + NSP.
pub fn pretrain(corpus: &Corpus, tokenizer: &Tokenizer, vocab: &Vocabulary, config: EncoderConfig, pc: &PretrainConfig) -> Result<EncoderCheckpoint> {
    let mut ckpt = EncoderCheckpoint::init(config, vocab)?;
    let lines = encode_lines(corpus, tokenizer, vocab);
    run_steps(&mut ckpt, &lines, corpus.tag.as_str(), pc)?;
    Ok(ckpt)
}

/// Continues MLM + NSP training of `ckpt` on a domain corpus. The
/// vocabulary must be the one the checkpoint was built with.
pub fn further_pretrain(
    ckpt: &EncoderCheckpoint,
    corpus: &Corpus,
    tokenizer: &Tokenizer,
    vocab: &Vocabulary,
    pc: &PretrainConfig,
) -> Result<EncoderCheckpoint> {
    ckpt.check_vocab(vocab)?;
    let mut out = ckpt.clone();
    let lines = encode_lines(corpus, tokenizer, vocab);
    run_steps(&mut out, &lines, corpus.tag.as_str(), pc)?;
    Ok(out)
}

/// Mean MLM cross-entropy per masked token over `examples` seeded examples
/// drawn from `lines`, in evaluation mode.
pub fn mlm_eval_loss(ckpt: &EncoderCheckpoint, lines: &[Vec<usize>], examples: usize, batch: usize, seed: u64) -> Result<f64> {
    let nsp = NspSampler::new(lines.len())?;
    let mut pair_rng = rng::stream(seed, "eval.nsp");
    let mut mask_rng = rng::stream(seed, "eval.mask");
    let all = sample_examples(lines, &nsp, examples, &ckpt.config, 0.15, &mut pair_rng, &mut mask_rng)?;
    let (mut total, mut count) = (0.0, 0usize);
    for chunk in all.chunks(batch.max(1)) {
        let mut g = Graph::<f32>::new();
        let loss = pretrain_loss(&mut g, &ckpt.params, &ckpt.config, chunk)?;
        if let Some(m) = loss.mlm {
            total += g.value(m).item() as f64 * loss.masked as f64;
            count += loss.masked;
        }
    }
    if count == 0 {
        return Err(Error::Empty("masked positions for evaluation"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SourceTag;
    use crate::tokenize::build_vocab;

    fn corpus() -> Corpus {
        Corpus::from_lines(SourceTag::General, ["甲乙丙丁", "乙丙丁戊", "丙丁戊己", "丁戊己庚"])
    }

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            layers: 1,
            heads: 2,
            d_model: 8,
            d_ff: 16,
            max_len: 12,
            dropout: 0.1,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn zero_steps_is_initialization() {
        let c = corpus();
        let v = build_vocab(&c, &Tokenizer::Char, 1).unwrap();
        let ck = pretrain(&c, &Tokenizer::Char, &v, tiny(), &PretrainConfig::default()).unwrap();
        assert_eq!(ck.params, EncoderCheckpoint::init(tiny(), &v).unwrap().params);
        assert_eq!(ck.history.len(), 1);
        assert_eq!(ck.history[0].final_mean_loss, None);
    }

    #[test]
    fn further_pretraining_checks_vocab_and_zero_lr_is_a_no_op() {
        let c = corpus();
        let tk = Tokenizer::Char;
        let v = build_vocab(&c, &tk, 1).unwrap();
        let ck = EncoderCheckpoint::init(tiny(), &v).unwrap();
        let pc = PretrainConfig {
            lr: 0.0,
            ..PretrainConfig::further(5, 1)
        };
        let out = further_pretrain(&ck, &c, &tk, &v, &pc).unwrap();
        assert_eq!(out.params, ck.params);
        assert_eq!(out.history.len(), 1);

        let none = further_pretrain(&ck, &c, &tk, &v, &PretrainConfig::further(0, 1)).unwrap();
        assert_eq!(none.params, ck.params);

        let other = Vocabulary::from_tokens(["x"]).unwrap();
        assert!(matches!(
            further_pretrain(&ck, &c, &tk, &other, &pc),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn mlm_loss_covers_exactly_the_masked_positions() {
        let c = corpus();
        let v = build_vocab(&c, &Tokenizer::Char, 1).unwrap();
        let ck = EncoderCheckpoint::init(tiny(), &v).unwrap();
        let p = ck.params.cast::<f64>();
        let mut r = rng::stream(0, "t");
        let e = make_mlm_example(&[5, 6, 7, 8], &[8, 9, 6], true, v.len(), 12, 0.5, &mut r).unwrap();
        assert!(!e.masked_positions.is_empty());
        let mut g = Graph::<f64>::new();
        let l = pretrain_loss(&mut g, &p, &ck.config, std::slice::from_ref(&e)).unwrap();
        let got = g.value(l.mlm.unwrap()).item();

        // score every position, then average only the masked ones by hand
        let x = batch_of(std::slice::from_ref(&e)).unwrap();
        let hidden = encode(&mut g, &p, &ck.config, "", &x).unwrap().hidden;
        let rows: Vec<usize> = (0..x.len).collect();
        let h = gather_rows(&mut g, hidden, &rows).unwrap();
        let logits = mlm_logits(&mut g, &p, h).unwrap();
        let lp = g.log_softmax(logits).unwrap();
        let lp = g.value(lp);
        let want = -e
            .masked_positions
            .iter()
            .zip(&e.original_ids)
            .map(|(&pos, &id)| lp.at(&[pos, id]))
            .sum::<f64>()
            / e.masked_positions.len() as f64;
        assert!((got - want).abs() < 1e-12);
    }
}
