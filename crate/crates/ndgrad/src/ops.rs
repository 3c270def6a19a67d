use rand::Rng;

use crate::error::{invalid, shape_err, Result};
use crate::float::Float;
use crate::graph::{gelu, CustomOp, Graph, Op, Var};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl<T: Float> Graph<T> {
    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (at, bt) = (self.value(a), self.value(b));
        if !is_suffix(bt.shape(), at.shape()) {
            return Err(shape_err(op, &[at.shape(), bt.shape()]));
        }
        let nb = bt.len();
        let data = at
            .data()
            .iter()
            .enumerate()
            .map(|(k, x)| f(*x, bt.data()[k % nb]))
            .collect();
        Tensor::new(at.shape().to_vec(), data)
    }

    /// Elementwise sum. `b` may have any shape that is a suffix of `a`'s
    /// shape, in which case it is broadcast over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let at = self.value(a);
        let t = Tensor::new(at.shape().to_vec(), at.data().iter().map(|x| *x * c).collect()).unwrap();
        self.push(t, Op::Scale(a, c))
    }

    /// `a: [..., m, k]` times `b: [k, n]` (shared across the batch) or
    /// `b: [..., k, n]` with the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.value(a), self.value(b));
        let (sa, sb) = (at.shape(), bt.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_rhs = sb.len() == 2;
        if k != kb || (!shared_rhs && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(shape_err("matmul", &[sa, sb]));
        }
        let batch = at.len() / (m * k).max(1);
        let mut out = vec![T::zero(); batch * m * n];
        for bi in 0..batch {
            let boff = if shared_rhs { 0 } else { bi * k * n };
            kernels::gemm_nn(
                &at.data()[bi * m * k..(bi + 1) * m * k],
                &bt.data()[boff..boff + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::MatMul { a, b, shared_rhs }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err("transpose", &[&s]));
        }
        let r = s.len();
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        let data = kernels::permute(self.value(a).data(), &s, &axes);
        let shape = axes.iter().map(|&i| s[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Transpose(a)))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        let mut seen = vec![false; s.len()];
        if axes.len() != s.len() || axes.iter().any(|&x| x >= s.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(invalid("permute", format!("bad axes {axes:?} for shape {s:?}")));
        }
        let data = kernels::permute(self.value(a).data(), &s, axes);
        let shape = axes.iter().map(|&i| s[i]).collect();
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Permute(a, axes.to_vec())))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .value(*inputs.first().ok_or_else(|| invalid("concat", "no inputs"))?)
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.shape(*v)).collect();
                return Err(shape_err("concat", &shapes));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(invalid("slice", format!("{start}..{end} on axis {axis} of {s:?}")));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let w = end - start;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * w * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + w * inner]);
        }
        let mut shape = s;
        shape[axis] = w;
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Slice { x, axis, start }))
    }

    /// Rows of `table: [V, D]` selected by `ids`, shaped `out_prefix ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], out_prefix: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || out_prefix.iter().product::<usize>() != ids.len() {
            return Err(shape_err("embedding_lookup", &[&ts, out_prefix]));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(invalid("embedding_lookup", format!("id {bad} >= vocabulary size {v}")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let mut shape = out_prefix.to_vec();
        shape.push(d);
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t, Op::Embedding { table, ids: ids.to_vec() }))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let at = self.value(a);
        Tensor::new(at.shape().to_vec(), at.data().iter().map(|x| f(*x)).collect()).unwrap()
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.tanh());
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| T::one() / (T::one() + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(T::zero()));
        self.push(t, Op::Relu(a))
    }

    /// Tanh approximation of the Gaussian error linear unit.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.unary(a, gelu);
        self.push(t, Op::Gelu(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.softmax_impl(a, None)
    }

    /// Softmax over the last axis restricted to entries where `keep` is true.
    /// Dropped entries get probability exactly zero; a row with nothing kept
    /// is all zeros.
    pub fn masked_softmax(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(shape_err("softmax", &[self.shape(a), &[keep.len()]]));
        }
        self.softmax_impl(a, Some(keep))
    }

    fn softmax_impl(&mut self, a: Var, keep: Option<&[bool]>) -> Result<Var> {
        let at = self.value(a);
        let w = *at.shape().last().ok_or_else(|| shape_err("softmax", &[at.shape()]))?;
        let x = at.data();
        let mut y = vec![T::zero(); x.len()];
        for r in 0..x.len() / w.max(1) {
            let range = r * w..(r + 1) * w;
            let kept = |j: usize| keep.is_none_or(|k| k[r * w + j]);
            let mut mx = T::neg_infinity();
            for j in 0..w {
                if kept(j) {
                    mx = mx.max(x[range.start + j]);
                }
            }
            if mx == T::neg_infinity() {
                continue;
            }
            let mut z = T::zero();
            for j in 0..w {
                if kept(j) {
                    let e = (x[range.start + j] - mx).exp();
                    y[range.start + j] = e;
                    z += e;
                }
            }
            for v in &mut y[range] {
                *v /= z;
            }
        }
        let t = Tensor::new(at.shape().to_vec(), y)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let at = self.value(a);
        let w = *at.shape().last().ok_or_else(|| shape_err("log_softmax", &[at.shape()]))?;
        let x = at.data();
        let mut y = vec![T::zero(); x.len()];
        for r in 0..x.len() / w.max(1) {
            let row = &x[r * w..(r + 1) * w];
            let lse = log_sum_exp(row);
            for j in 0..w {
                y[r * w + j] = row[j] - lse;
            }
        }
        let t = Tensor::new(at.shape().to_vec(), y)?;
        Ok(self.push(t, Op::LogSoftmax(a)))
    }

    /// Mean negative log-likelihood of `targets` under softmax(`logits`),
    /// where `logits` is viewed as `[rows, classes]`. Rows whose target is
    /// `None` are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let lt = self.value(logits);
        let c = *lt.shape().last().ok_or_else(|| shape_err("cross_entropy", &[lt.shape()]))?;
        let rows = lt.len() / c.max(1);
        if rows != targets.len() {
            return Err(shape_err("cross_entropy", &[lt.shape(), &[targets.len()]]));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(invalid("cross_entropy", format!("target {bad} >= classes {c}")));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(invalid("cross_entropy", "no target rows"));
        }
        let x = lt.data();
        let mut probs = vec![T::zero(); x.len()];
        let mut loss = T::zero();
        for (r, t) in targets.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let lse = log_sum_exp(row);
            for j in 0..c {
                probs[r * c + j] = (row[j] - lse).exp();
            }
            if let Some(t) = t {
                loss += lse - row[*t];
            }
        }
        loss /= T::from_usize(count).unwrap();
        let targets = targets.to_vec();
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets, probs, count }))
    }

    /// Normalizes every slice along the last axis to zero mean and unit
    /// variance. The affine gain and bias are applied separately.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let w = *xt.shape().last().ok_or_else(|| shape_err("layer_norm", &[xt.shape()]))?;
        let wt = T::from_usize(w).unwrap();
        let eps = T::from_f64(eps).unwrap();
        let d = xt.data();
        let rows = d.len() / w.max(1);
        let mut y = vec![T::zero(); d.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &d[r * w..(r + 1) * w];
            let mean: T = row.iter().copied().sum::<T>() / wt;
            let var: T = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / wt;
            let is = T::one() / (var + eps).sqrt();
            for j in 0..w {
                y[r * w + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let t = Tensor::new(xt.shape().to_vec(), y)?;
        Ok(self.push(t, Op::LayerNorm { x, inv_std }))
    }

    /// Inverted dropout. Identity in evaluation mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !self.is_training() || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - p)).unwrap();
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if self.rng.random::<f64>() < p { T::zero() } else { keep_scale })
            .collect();
        let xt = self.value(x);
        let data = xt.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let t = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { x, mask }))
    }

    /// 1-D convolution of `x: [batch, len, c_in]` with `w: [width, c_in, c_out]`
    /// and `pad` zeros on both ends. `pad = 0` is valid padding.
    pub fn conv1d(&mut self, x: Var, w: Var, pad: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || xs[1] + 2 * pad < ws[0] {
            return Err(shape_err("conv1d", &[&xs, &ws]));
        }
        let d = ConvDims {
            batch: xs[0],
            len: xs[1],
            c_in: xs[2],
            width: ws[0],
            c_out: ws[2],
            pad,
            out_len: xs[1] + 2 * pad - ws[0] + 1,
        };
        let data = kernels::conv1d_forward(self.value(x).data(), self.value(w).data(), &d);
        let t = Tensor::new(vec![d.batch, d.out_len, d.c_out], data)?;
        Ok(self.push(t, Op::Conv1d { x, w, pad }))
    }

    /// Max over the time axis: `[batch, len, c] -> [batch, c]`.
    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] == 0 {
            return Err(shape_err("max_over_time", &[&s]));
        }
        let (b, l, c) = (s[0], s[1], s[2]);
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(b * c);
        let mut argmax = Vec::with_capacity(b * c);
        for bi in 0..b {
            for ci in 0..c {
                let mut best = bi * l * c + ci;
                for t in 1..l {
                    let k = (bi * l + t) * c + ci;
                    if d[k] > d[best] {
                        best = k;
                    }
                }
                data.push(d[best]);
                argmax.push(best);
            }
        }
        let t = Tensor::new(vec![b, c], data)?;
        Ok(self.push(t, Op::MaxOverTime { x, argmax }))
    }

    /// Windowed max over time on `[batch, len, c]`; windows start every
    /// `stride` steps and are clipped at the sequence end.
    pub fn max_pool1d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] == 0 || window == 0 || stride == 0 {
            return Err(shape_err("max_pool1d", &[&s]));
        }
        let (b, l, c) = (s[0], s[1], s[2]);
        let out_len = kernels::pool_len(l, window, stride);
        let d = self.value(x).data();
        let mut data = Vec::with_capacity(b * out_len * c);
        let mut argmax = Vec::with_capacity(b * out_len * c);
        for bi in 0..b {
            for o in 0..out_len {
                let lo = o * stride;
                let hi = (lo + window).min(l);
                for ci in 0..c {
                    let mut best = (bi * l + lo) * c + ci;
                    for t in lo + 1..hi {
                        let k = (bi * l + t) * c + ci;
                        if d[k] > d[best] {
                            best = k;
                        }
                    }
                    data.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(vec![b, out_len, c], data)?;
        Ok(self.push(t, Op::MaxPool1d { x, argmax }))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let at = self.value(a);
        let m = at.data().iter().copied().sum::<T>() / T::from_usize(at.len().max(1)).unwrap();
        self.push(Tensor::scalar(m), Op::Mean(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Records an externally computed operation. `output` must already hold
    /// the forward value; `op` supplies the backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        self.push(output, Op::Custom { inputs: inputs.to_vec(), op })
    }
}

pub(crate) fn log_sum_exp<T: Float>(row: &[T]) -> T {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    mx + row.iter().map(|v| (*v - mx).exp()).sum::<T>().ln()
}
