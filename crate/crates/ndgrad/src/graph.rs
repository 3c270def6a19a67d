use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{GradError, Result};
use crate::float::Float;
use crate::kernels::{self, ConvDims};
use crate::params::{Gradients, Params};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside this crate.
///
/// `backward` receives the forward inputs and the upstream gradient of the
/// output and returns one gradient per input, each shaped like that input.
pub trait CustomOp<T: Float> {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>>;
}

pub(crate) enum Op<T: Float> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul { a: Var, b: Var, shared_rhs: bool },
    Transpose(Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Embedding { table: Var, ids: Vec<usize> },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<T>, count: usize },
    LayerNorm { x: Var, inv_std: Vec<T> },
    Dropout { x: Var, mask: Vec<T> },
    Conv1d { x: Var, w: Var, pad: usize },
    MaxOverTime { x: Var, argmax: Vec<usize> },
    MaxPool1d { x: Var, argmax: Vec<usize> },
    Mean(Var),
    Sum(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

impl<T: Float> Op<T> {
    pub(crate) fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Permute(..) => "permute",
            Op::Reshape(_) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Embedding { .. } => "embedding_lookup",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Relu(_) => "relu",
            Op::Gelu(_) => "gelu",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxOverTime { .. } => "max_over_time",
            Op::MaxPool1d { .. } => "max_pool1d",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

pub(crate) struct Node<T: Float> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// The tape. Nodes are appended in execution order.
pub struct Graph<T: Float> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    training: bool,
    pub(crate) rng: ChaCha8Rng,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    consumed: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    /// Evaluation-mode graph (dropout is the identity).
    pub fn new() -> Self {
        Self::with_mode(false, 0)
    }

    /// Training-mode graph whose dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self::with_mode(true, seed)
    }

    fn with_mode(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: Vec::new(),
            param_index: HashMap::new(),
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            other => inputs_of(other).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Pulls parameter `name` onto the tape. Repeated calls with the same name
    /// return the same node, so tied weights share one gradient.
    pub fn param(&mut self, params: &Params<T>, name: &str) -> Result<Var> {
        if let Some(v) = self.param_index.get(name) {
            return Ok(*v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| GradError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.leaf(t);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Gradients of every parameter pulled in with [`Graph::param`]; zeros for
    /// parameters the loss does not depend on.
    pub fn param_grads(&self) -> Gradients<T> {
        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let g = self
                .grad(*v)
                .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()));
            out.insert(name.clone(), g);
        }
        out
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(GradError::TapeConsumed);
        }
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(GradError::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g);
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let mut out: Vec<(Var, Vec<T>)> = Vec::new();
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, reduce_broadcast(g, val(*b).len())));
            }
            Op::Sub(a, b) => {
                out.push((*a, g.to_vec()));
                let neg: Vec<T> = g.iter().map(|x| -*x).collect();
                out.push((*b, reduce_broadcast(&neg, val(*b).len())));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                let nb = bv.len();
                let ga: Vec<T> = g.iter().enumerate().map(|(k, x)| *x * bv[k % nb]).collect();
                let gb_full: Vec<T> = g.iter().zip(av).map(|(x, y)| *x * *y).collect();
                out.push((*a, ga));
                out.push((*b, reduce_broadcast(&gb_full, nb)));
            }
            Op::Scale(a, c) => out.push((*a, g.iter().map(|x| *x * *c).collect())),
            Op::MatMul { a, b, shared_rhs } => {
                let (at, bt) = (val(*a), val(*b));
                let ra = at.rank();
                let (m, k) = (at.shape()[ra - 2], at.shape()[ra - 1]);
                let n = *bt.shape().last().unwrap();
                let batch = at.len() / (m * k);
                let mut ga = vec![T::zero(); at.len()];
                let mut gb = vec![T::zero(); bt.len()];
                for bi in 0..batch {
                    let aoff = bi * m * k;
                    let boff = if *shared_rhs { 0 } else { bi * k * n };
                    let goff = bi * m * n;
                    kernels::gemm_nt(
                        &g[goff..goff + m * n],
                        &bt.data()[boff..boff + k * n],
                        &mut ga[aoff..aoff + m * k],
                        m,
                        n,
                        k,
                    );
                    kernels::gemm_tn(
                        &at.data()[aoff..aoff + m * k],
                        &g[goff..goff + m * n],
                        &mut gb[boff..boff + k * n],
                        m,
                        k,
                        n,
                    );
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let r = s.len();
                let mut axes: Vec<usize> = (0..r).collect();
                axes.swap(r - 2, r - 1);
                out.push((*a, kernels::permute(g, s, &axes)));
            }
            Op::Permute(a, axes) => {
                let inv = kernels::inverse_axes(axes);
                out.push((*a, kernels::permute(g, node.value.shape(), &inv)));
            }
            Op::Reshape(a) => out.push((*a, g.to_vec())),
            Op::Concat { inputs, axis } => {
                let s = node.value.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let total = s[*axis];
                let mut offset = 0;
                for v in inputs {
                    let w = val(*v).shape()[*axis];
                    let mut part = Vec::with_capacity(outer * w * inner);
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        part.extend_from_slice(&g[base..base + w * inner]);
                    }
                    offset += w;
                    out.push((*v, part));
                }
            }
            Op::Slice { x, axis, start } => {
                let xs = val(*x).shape();
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[axis + 1..].iter().product();
                let total = xs[*axis];
                let w = node.value.shape()[*axis];
                let mut full = vec![T::zero(); val(*x).len()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * w * inner;
                    full[dst..dst + w * inner].copy_from_slice(&g[src..src + w * inner]);
                }
                out.push((*x, full));
            }
            Op::Embedding { table, ids } => {
                let d = val(*table).shape()[1];
                let mut full = vec![T::zero(); val(*table).len()];
                for (r, id) in ids.iter().enumerate() {
                    for j in 0..d {
                        full[id * d + j] += g[r * d + j];
                    }
                }
                out.push((*table, full));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                out.push((*a, g.iter().zip(y).map(|(g, y)| *g * (T::one() - *y * *y)).collect()));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                out.push((*a, g.iter().zip(y).map(|(g, y)| *g * *y * (T::one() - *y)).collect()));
            }
            Op::Relu(a) => {
                let x = val(*a).data();
                out.push((
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                        .collect(),
                ));
            }
            Op::Gelu(a) => {
                let x = val(*a).data();
                out.push((*a, g.iter().zip(x).map(|(g, x)| *g * gelu_grad(*x)).collect()));
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap_or(&1);
                let mut gx = vec![T::zero(); y.len()];
                for r in 0..y.len() / w.max(1) {
                    let ys = &y[r * w..(r + 1) * w];
                    let gs = &g[r * w..(r + 1) * w];
                    let dot: T = ys.iter().zip(gs).map(|(a, b)| *a * *b).sum();
                    for j in 0..w {
                        gx[r * w + j] = ys[j] * (gs[j] - dot);
                    }
                }
                out.push((*a, gx));
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap_or(&1);
                let mut gx = vec![T::zero(); y.len()];
                for r in 0..y.len() / w.max(1) {
                    let gs = &g[r * w..(r + 1) * w];
                    let total: T = gs.iter().copied().sum();
                    for j in 0..w {
                        gx[r * w + j] = gs[j] - y[r * w + j].exp() * total;
                    }
                }
                out.push((*a, gx));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let c = *val(*logits).shape().last().unwrap();
                let scale = g[0] / T::from_usize(*count).unwrap();
                let mut gx = vec![T::zero(); probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for j in 0..c {
                            gx[r * c + j] = probs[r * c + j] * scale;
                        }
                        gx[r * c + t] -= scale;
                    }
                }
                out.push((*logits, gx));
            }
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let w = *node.value.shape().last().unwrap();
                let wt = T::from_usize(w).unwrap();
                let mut gx = vec![T::zero(); y.len()];
                for r in 0..y.len() / w {
                    let ys = &y[r * w..(r + 1) * w];
                    let gs = &g[r * w..(r + 1) * w];
                    let mean_g: T = gs.iter().copied().sum::<T>() / wt;
                    let mean_gy: T = gs.iter().zip(ys).map(|(a, b)| *a * *b).sum::<T>() / wt;
                    for j in 0..w {
                        gx[r * w + j] = inv_std[r] * (gs[j] - mean_g - ys[j] * mean_gy);
                    }
                }
                out.push((*x, gx));
            }
            Op::Dropout { x, mask } => {
                out.push((*x, g.iter().zip(mask).map(|(g, m)| *g * *m).collect()));
            }
            Op::Conv1d { x, w, pad } => {
                let (xt, wt) = (val(*x), val(*w));
                let d = ConvDims {
                    batch: xt.shape()[0],
                    len: xt.shape()[1],
                    c_in: xt.shape()[2],
                    width: wt.shape()[0],
                    c_out: wt.shape()[2],
                    pad: *pad,
                    out_len: node.value.shape()[1],
                };
                let (dx, dw) = kernels::conv1d_backward(xt.data(), wt.data(), g, &d);
                out.push((*x, dx));
                out.push((*w, dw));
            }
            Op::MaxOverTime { x, argmax } | Op::MaxPool1d { x, argmax } => {
                let mut gx = vec![T::zero(); val(*x).len()];
                for (o, src) in argmax.iter().enumerate() {
                    gx[*src] += g[o];
                }
                out.push((*x, gx));
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let v = g[0] / T::from_usize(n).unwrap();
                out.push((*a, vec![v; n]));
            }
            Op::Sum(a) => out.push((*a, vec![g[0]; val(*a).len()])),
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| val(*v)).collect();
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("grad shape");
                let grads = op.backward(&ins, &node.value, &gt);
                for (v, gi) in inputs.iter().zip(grads) {
                    out.push((*v, gi.into_data()));
                }
            }
        }
        for (v, contribution) in out {
            self.accumulate(v, contribution);
        }
    }
}

/// Sums a gradient of the broadcast output back down to an operand whose
/// shape is a suffix of the output shape.
fn reduce_broadcast<T: Float>(g: &[T], n: usize) -> Vec<T> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut r = vec![T::zero(); n];
    for (k, x) in g.iter().enumerate() {
        r[k % n] += *x;
    }
    r
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu<T: Float>(x: T) -> T {
    let c = T::from_f64(GELU_C).unwrap();
    let k = T::from_f64(0.044715).unwrap();
    let half = T::from_f64(0.5).unwrap();
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let c = T::from_f64(GELU_C).unwrap();
    let k = T::from_f64(0.044715).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let three = T::from_f64(3.0).unwrap();
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * k * x * x)
}

fn inputs_of<T: Float>(op: &Op<T>) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::MatMul { a, b, .. } => vec![*a, *b],
        Op::Conv1d { x, w, .. } => vec![*x, *w],
        Op::Scale(a, _)
        | Op::Transpose(a)
        | Op::Permute(a, _)
        | Op::Reshape(a)
        | Op::Tanh(a)
        | Op::Sigmoid(a)
        | Op::Relu(a)
        | Op::Gelu(a)
        | Op::Softmax(a)
        | Op::LogSoftmax(a)
        | Op::Mean(a)
        | Op::Sum(a) => vec![*a],
        Op::Slice { x, .. }
        | Op::LayerNorm { x, .. }
        | Op::Dropout { x, .. }
        | Op::MaxOverTime { x, .. }
        | Op::MaxPool1d { x, .. } => vec![*x],
        Op::Embedding { table, .. } => vec![*table],
        Op::CrossEntropy { logits, .. } => vec![*logits],
        Op::Concat { inputs, .. } | Op::Custom { inputs, .. } => inputs.clone(),
    }
}
