use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenize::{CLS, MASK, NUM_SPECIALS, PAD, SEP};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Corruption {
    Masked,
    Random,
    Kept,
}

/// One pretraining input: `[CLS] a [SEP] b [SEP]` padded to `max_len`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlmExample {
    pub input_ids: Vec<usize>,
    pub segment_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub masked_positions: Vec<usize>,
    /// Original ids at `masked_positions`.
    pub original_ids: Vec<usize>,
    /// What happened at each masked position.
    pub corruption: Vec<Corruption>,
    pub is_next: bool,
}

/// Builds a corrupted example. The longer segment loses tokens from its tail
/// until the pair fits; each remaining token is selected with probability
/// `mask_prob` and then replaced by `[MASK]` (80%), a random non-special id
/// (10%) or left as is (10%).
pub fn make_mlm_example<R: Rng>(
    tokens_a: &[usize],
    tokens_b: &[usize],
    is_next: bool,
    vocab_size: usize,
    max_len: usize,
    mask_prob: f64,
    rng: &mut R,
) -> Result<MlmExample> {
    if max_len < 3 {
        return Err(Error::InvalidInput(format!("max_len {max_len} leaves no room for [CLS] a [SEP] b [SEP]")));
    }
    let (mut a, mut b) = (tokens_a, tokens_b);
    while a.len() + b.len() + 3 > max_len {
        if a.len() >= b.len() {
            a = &a[..a.len() - 1];
        } else {
            b = &b[..b.len() - 1];
        }
    }
    let mut ids = Vec::with_capacity(max_len);
    let mut segs = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend_from_slice(a);
    ids.push(SEP);
    segs.resize(ids.len(), 0);
    ids.extend_from_slice(b);
    ids.push(SEP);
    segs.resize(ids.len(), 1);
    let real = ids.len();
    let mut masked_positions = Vec::new();
    let mut original_ids = Vec::new();
    let mut corruption = Vec::new();
    for (pos, id) in ids.iter_mut().enumerate() {
        if matches!(*id, CLS | SEP | PAD) || !rng.random_bool(mask_prob) {
            continue;
        }
        masked_positions.push(pos);
        original_ids.push(*id);
        let u: f64 = rng.random();
        let kind = if u < 0.8 {
            *id = MASK;
            Corruption::Masked
        } else if u < 0.9 && vocab_size > NUM_SPECIALS {
            *id = rng.random_range(NUM_SPECIALS..vocab_size);
            Corruption::Random
        } else {
            Corruption::Kept
        };
        corruption.push(kind);
    }
    ids.resize(max_len, PAD);
    segs.resize(max_len, 0);
    let attention_mask = (0..max_len).map(|i| i < real).collect();
    Ok(MlmExample {
        input_ids: ids,
        segment_ids: segs,
        attention_mask,
        masked_positions,
        original_ids,
        corruption,
        is_next,
    })
}

/// Samples `(a, b, is_next)` line pairs: `a` uniform over lines that have a
/// successor, `b` the successor with probability 0.5 and otherwise a uniform
/// line other than `a`.
#[derive(Clone, Copy, Debug)]
pub struct NspSampler {
    lines: usize,
}

impl NspSampler {
    pub fn new(lines: usize) -> Result<Self> {
        if lines < 2 {
            return Err(Error::InvalidInput(format!(
                "next-sentence pairs need at least 2 lines, corpus has {lines}"
            )));
        }
        Ok(Self { lines })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> (usize, usize, bool) {
        let a = rng.random_range(0..self.lines - 1);
        if rng.random_bool(0.5) {
            return (a, a + 1, true);
        }
        let mut b = rng.random_range(0..self.lines - 1);
        if b >= a {
            b += 1;
        }
        (a, b, false)
    }
}
