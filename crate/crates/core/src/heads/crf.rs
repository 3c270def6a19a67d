//! Linear-chain CRF: path scores, the forward algorithm, Viterbi decoding
//! and a graph op for the batched negative log-likelihood.

use ndgrad::{CustomOp, Float, Graph, Tensor, Var};

use crate::error::{Error, Result};

/// Borrowed CRF scores over `num_tags` tags. `transitions[from * T + to]`.
#[derive(Clone, Copy, Debug)]
pub struct CrfScores<'a, T> {
    pub num_tags: usize,
    pub transitions: &'a [T],
    pub start: &'a [T],
    pub end: &'a [T],
}

impl<'a, T: Float> CrfScores<'a, T> {
    pub fn new(num_tags: usize, transitions: &'a [T], start: &'a [T], end: &'a [T]) -> Result<Self> {
        if transitions.len() != num_tags * num_tags || start.len() != num_tags || end.len() != num_tags {
            return Err(Error::InvalidInput(format!(
                "CRF scores for {num_tags} tags need {}+{num_tags}+{num_tags} values, got {}+{}+{}",
                num_tags * num_tags,
                transitions.len(),
                start.len(),
                end.len()
            )));
        }
        Ok(Self {
            num_tags,
            transitions,
            start,
            end,
        })
    }

    fn trans(&self, from: usize, to: usize) -> T {
        self.transitions[from * self.num_tags + to]
    }

    fn check(&self, emissions: &[T]) -> Result<usize> {
        let t = self.num_tags;
        if emissions.is_empty() {
            return Err(Error::Empty("CRF sequence"));
        }
        if t == 0 || emissions.len() % t != 0 {
            return Err(Error::InvalidInput(format!(
                "{} emission scores are not a multiple of {t} tags",
                emissions.len()
            )));
        }
        Ok(emissions.len() / t)
    }
}

/// `start[y0] + e0[y0] + Σ (trans[y(i-1), yi] + ei[yi]) + end[y_last]`,
/// accumulated left to right.
pub fn path_score<T: Float>(emissions: &[T], crf: &CrfScores<T>, tags: &[usize]) -> Result<T> {
    let len = crf.check(emissions)?;
    if tags.len() != len {
        return Err(Error::InvalidInput(format!("{} tags for {len} positions", tags.len())));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= crf.num_tags) {
        return Err(Error::IdOutOfRange {
            id: bad,
            size: crf.num_tags,
        });
    }
    let t = crf.num_tags;
    let mut s = crf.start[tags[0]] + emissions[tags[0]];
    for i in 1..len {
        s = s + crf.trans(tags[i - 1], tags[i]) + emissions[i * t + tags[i]];
    }
    Ok(s + crf.end[tags[len - 1]])
}

fn log_sum_exp<T: Float>(xs: impl Iterator<Item = T> + Clone) -> T {
    let mx = xs.clone().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    mx + xs.map(|x| (x - mx).exp()).sum::<T>().ln()
}

/// Forward log-space messages: `alpha[i][y]` is the log-sum of all prefixes
/// ending in tag y at position i (start and emissions included).
fn forward<T: Float>(emissions: &[T], crf: &CrfScores<T>, len: usize) -> Vec<T> {
    let t = crf.num_tags;
    let mut alpha = vec![T::zero(); len * t];
    for y in 0..t {
        alpha[y] = crf.start[y] + emissions[y];
    }
    for i in 1..len {
        for y in 0..t {
            let prev = &alpha[(i - 1) * t..i * t];
            let lse = log_sum_exp((0..t).map(|p| prev[p] + crf.trans(p, y)));
            alpha[i * t + y] = lse + emissions[i * t + y];
        }
    }
    alpha
}

fn backward<T: Float>(emissions: &[T], crf: &CrfScores<T>, len: usize) -> Vec<T> {
    let t = crf.num_tags;
    let mut beta = vec![T::zero(); len * t];
    beta[(len - 1) * t..].copy_from_slice(crf.end);
    for i in (0..len - 1).rev() {
        for y in 0..t {
            let next = &beta[(i + 1) * t..(i + 2) * t];
            beta[i * t + y] = log_sum_exp((0..t).map(|n| crf.trans(y, n) + emissions[(i + 1) * t + n] + next[n]));
        }
    }
    beta
}

/// log Z by the forward algorithm.
pub fn log_partition<T: Float>(emissions: &[T], crf: &CrfScores<T>) -> Result<T> {
    let len = crf.check(emissions)?;
    let t = crf.num_tags;
    let alpha = forward(emissions, crf, len);
    Ok(log_sum_exp((0..t).map(|y| alpha[(len - 1) * t + y] + crf.end[y])))
}

/// `log Z − score(tags)`.
pub fn crf_neg_log_likelihood<T: Float>(emissions: &[T], tags: &[usize], crf: &CrfScores<T>) -> Result<T> {
    let score = path_score(emissions, crf, tags)?;
    Ok(log_partition(emissions, crf)? - score)
}

/// Highest-scoring tag path and its score. Among equal scores the lowest
/// tag id wins at every backtracking step, starting from the last position.
pub fn viterbi_decode<T: Float>(emissions: &[T], crf: &CrfScores<T>) -> Result<(Vec<usize>, T)> {
    let len = crf.check(emissions)?;
    let t = crf.num_tags;
    let mut delta: Vec<T> = (0..t).map(|y| crf.start[y] + emissions[y]).collect();
    let mut back = vec![0usize; len * t];
    for i in 1..len {
        let mut next = vec![T::zero(); t];
        for y in 0..t {
            let mut best = 0;
            let mut best_s = delta[0] + crf.trans(0, y);
            for p in 1..t {
                let s = delta[p] + crf.trans(p, y);
                if s > best_s {
                    best = p;
                    best_s = s;
                }
            }
            back[i * t + y] = best;
            next[y] = best_s + emissions[i * t + y];
        }
        delta = next;
    }
    let mut last = 0;
    let mut last_s = delta[0] + crf.end[0];
    for y in 1..t {
        let s = delta[y] + crf.end[y];
        if s > last_s {
            last = y;
            last_s = s;
        }
    }
    let mut path = vec![0; len];
    path[len - 1] = last;
    for i in (1..len).rev() {
        path[i - 1] = back[i * t + path[i]];
    }
    Ok((path, last_s))
}

/// Per-position tag marginals `[len × T]` and pairwise marginals
/// `[(len-1) × T × T]`.
pub fn marginals<T: Float>(emissions: &[T], crf: &CrfScores<T>) -> Result<(Vec<T>, Vec<T>)> {
    let len = crf.check(emissions)?;
    let t = crf.num_tags;
    let alpha = forward(emissions, crf, len);
    let beta = backward(emissions, crf, len);
    let log_z = log_sum_exp((0..t).map(|y| alpha[(len - 1) * t + y] + crf.end[y]));
    let node = (0..len * t).map(|k| (alpha[k] + beta[k] - log_z).exp()).collect();
    let mut pair = vec![T::zero(); (len.saturating_sub(1)) * t * t];
    for i in 0..len.saturating_sub(1) {
        for p in 0..t {
            for n in 0..t {
                let s = alpha[i * t + p] + crf.trans(p, n) + emissions[(i + 1) * t + n] + beta[(i + 1) * t + n];
                pair[(i * t + p) * t + n] = (s - log_z).exp();
            }
        }
    }
    Ok((node, pair))
}

/// Backward rule of the batched CRF loss: mean NLL over sequences, each using
/// the first `lens[b]` positions of `emissions[b]`.
struct CrfNll {
    tags: Vec<Vec<usize>>,
    lens: Vec<usize>,
}

impl<T: Float> CustomOp<T> for CrfNll {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let (em, tr, st, en) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let (l, t) = (em.shape()[1], em.shape()[2]);
        let batch = self.lens.len();
        let scale = grad.item() / T::from_usize(batch).unwrap();
        let mut g_em = vec![T::zero(); em.len()];
        let mut g_tr = vec![T::zero(); tr.len()];
        let mut g_st = vec![T::zero(); t];
        let mut g_en = vec![T::zero(); t];
        let crf = CrfScores::new(t, tr.data(), st.data(), en.data()).unwrap();
        for b in 0..batch {
            let n = self.lens[b];
            let e = &em.data()[b * l * t..(b * l + n) * t];
            let (node, pair) = marginals(e, &crf).unwrap();
            let tags = &self.tags[b];
            for i in 0..n {
                for y in 0..t {
                    g_em[(b * l + i) * t + y] += scale * node[i * t + y];
                }
                g_em[(b * l + i) * t + tags[i]] -= scale;
            }
            for (k, p) in pair.iter().enumerate() {
                g_tr[k % (t * t)] += scale * *p;
            }
            for i in 1..n {
                g_tr[tags[i - 1] * t + tags[i]] -= scale;
            }
            for y in 0..t {
                g_st[y] += scale * node[y];
                g_en[y] += scale * node[(n - 1) * t + y];
            }
            g_st[tags[0]] -= scale;
            g_en[tags[n - 1]] -= scale;
        }
        vec![
            Tensor::new(em.shape().to_vec(), g_em).unwrap(),
            Tensor::new(tr.shape().to_vec(), g_tr).unwrap(),
            Tensor::new(vec![t], g_st).unwrap(),
            Tensor::new(vec![t], g_en).unwrap(),
        ]
    }
}

/// Mean CRF negative log-likelihood of `emissions: [B, L, T]` with
/// per-sequence lengths and gold tags, as a scalar on the graph.
pub fn crf_loss<T: Float>(
    g: &mut Graph<T>,
    emissions: Var,
    transitions: Var,
    start: Var,
    end: Var,
    tags: &[Vec<usize>],
    lens: &[usize],
) -> Result<Var> {
    let s = g.shape(emissions).to_vec();
    if s.len() != 3 || s[0] != lens.len() || tags.len() != lens.len() {
        return Err(Error::InvalidInput(format!("crf_loss: emissions {s:?} for {} sequences", lens.len())));
    }
    let (l, t) = (s[1], s[2]);
    let crf = CrfScores::new(t, g.value(transitions).data(), g.value(start).data(), g.value(end).data())?;
    let em = g.value(emissions).data();
    let mut total = T::zero();
    for (b, (&n, tg)) in lens.iter().zip(tags).enumerate() {
        if n == 0 || n > l || tg.len() < n {
            return Err(Error::InvalidInput(format!("crf_loss: sequence {b} has length {n} of {l}")));
        }
        total += crf_neg_log_likelihood(&em[b * l * t..(b * l + n) * t], &tg[..n], &crf)?;
    }
    let out = Tensor::scalar(total / T::from_usize(lens.len()).unwrap());
    let op = CrfNll {
        tags: tags.iter().zip(lens).map(|(tg, &n)| tg[..n].to_vec()).collect(),
        lens: lens.to_vec(),
    };
    Ok(g.custom(&[emissions, transitions, start, end], out, Box::new(op)))
}
