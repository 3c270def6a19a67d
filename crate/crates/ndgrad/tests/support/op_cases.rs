//! Random instances of every differentiable op, shared by the op gradient
//! tests and the workspace acceptance suite.

use ndgrad::gradcheck::{check_params_in, GradCheck};
use ndgrad::{init_rng, Float, Graph, Params, Result, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 100;

type Build<T> = fn(&mut Graph<T>, &Params<T>, &Ctx) -> Result<Var>;

/// Per-instance integer attributes (dims, ids, targets) shared by the
/// analytic and numeric evaluations.
struct Ctx {
    dims: Vec<usize>,
    ids: Vec<usize>,
    targets: Vec<Option<usize>>,
    keep: Vec<bool>,
}

fn rand_tensor<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(lo..hi)).unwrap())
}

/// Values bounded away from zero, for the relu kink.
fn away_from_zero<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.1..1.5);
        T::from_f64(if rng.random::<bool>() { m } else { -m }).unwrap()
    })
}

/// Distinct values at least 0.05 apart, for max-type ops.
fn spread<T: Float>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    Tensor::new(shape.to_vec(), vals.into_iter().map(|v| T::from_f64(v).unwrap()).collect()).unwrap()
}

/// Weighted sum so every output element carries a distinct upstream gradient.
fn weighted<T: Float>(g: &mut Graph<T>, p: &Params<T>, out: Var) -> Result<Var> {
    let _ = p;
    let shape = g.shape(out).to_vec();
    let w = Tensor::from_fn(&shape, |i| T::from_f64(((i * 7919) % 13) as f64 / 6.0 - 1.0).unwrap());
    let wv = g.constant(w);
    let prod = g.mul(out, wv)?;
    Ok(g.sum(prod))
}

struct Case<T: Float> {
    name: &'static str,
    make: fn(&mut ChaCha8Rng) -> (Params<T>, Ctx),
    build: Build<T>,
    training: bool,
}

fn ctx(dims: Vec<usize>) -> Ctx {
    Ctx {
        dims,
        ids: vec![],
        targets: vec![],
        keep: vec![],
    }
}

fn small_dims(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=4)).collect()
}

fn two<T: Float>(x: Tensor<T>, y: Tensor<T>) -> Params<T> {
    let mut p = Params::new();
    p.insert("x", x);
    p.insert("y", y);
    p
}

fn one<T: Float>(x: Tensor<T>) -> Params<T> {
    let mut p = Params::new();
    p.insert("x", x);
    p
}

fn cases<T: Float>() -> Vec<Case<T>> {
    vec![
        Case {
            name: "add",
            make: |r| {
                let d = small_dims(r, 3);
                (two(rand_tensor(r, &d, -1.0, 1.0), rand_tensor(r, &d[1..], -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.add(x, y)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "sub",
            make: |r| {
                let d = small_dims(r, 2);
                (two(rand_tensor(r, &d, -1.0, 1.0), rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.sub(x, y)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "mul",
            make: |r| {
                let d = small_dims(r, 3);
                (two(rand_tensor(r, &d, -1.0, 1.0), rand_tensor(r, &d[2..], -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.mul(x, y)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "scale",
            make: |r| {
                let d = small_dims(r, 2);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.scale(x, T::from_f64(-1.7).unwrap());
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "matmul_shared",
            make: |r| {
                let d = small_dims(r, 4);
                let x = rand_tensor(r, &[d[0], d[1], d[2]], -1.0, 1.0);
                let y = rand_tensor(r, &[d[2], d[3]], -1.0, 1.0);
                (two(x, y), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.matmul(x, y)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "matmul_batched",
            make: |r| {
                let d = small_dims(r, 4);
                let x = rand_tensor(r, &[d[0], d[1], d[2]], -1.0, 1.0);
                let y = rand_tensor(r, &[d[0], d[2], d[3]], -1.0, 1.0);
                (two(x, y), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.matmul(x, y)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "transpose",
            make: |r| {
                let d = small_dims(r, 3);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.transpose(x)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "permute",
            make: |r| {
                let d = small_dims(r, 4);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.permute(x, &[0, 2, 1, 3])?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "reshape",
            make: |r| {
                let d = small_dims(r, 3);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, c| {
                let x = g.param(p, "x")?;
                let o = g.reshape(x, &[c.dims[0] * c.dims[1], c.dims[2]])?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "concat",
            make: |r| {
                let d = small_dims(r, 4);
                let x = rand_tensor(r, &[d[0], d[1], d[2]], -1.0, 1.0);
                let y = rand_tensor(r, &[d[0], d[3], d[2]], -1.0, 1.0);
                (two(x, y), ctx(d))
            },
            build: |g, p, _| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.concat(&[x, y, x], 1)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "slice",
            make: |r| {
                let mut d = small_dims(r, 3);
                d[1] += 2;
                let start = r.random_range(0..d[1] - 1);
                let end = r.random_range(start + 1..=d[1]);
                d.push(start);
                d.push(end);
                (one(rand_tensor(r, &d[..3], -1.0, 1.0)), ctx(d))
            },
            build: |g, p, c| {
                let x = g.param(p, "x")?;
                let o = g.slice(x, 1, c.dims[3], c.dims[4])?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "embedding_lookup",
            make: |r| {
                let v = r.random_range(2..6);
                let d = r.random_range(1..4);
                let b = r.random_range(1..3);
                let l = r.random_range(1..5);
                let mut c = ctx(vec![b, l]);
                c.ids = (0..b * l).map(|_| r.random_range(0..v)).collect();
                (one(rand_tensor(r, &[v, d], -1.0, 1.0)), c)
            },
            build: |g, p, c| {
                let x = g.param(p, "x")?;
                let o = g.embedding(x, &c.ids, &c.dims)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "tanh",
            make: |r| {
                let d = small_dims(r, 2);
                (one(rand_tensor(r, &d, -2.0, 2.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.tanh(x);
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "sigmoid",
            make: |r| {
                let d = small_dims(r, 2);
                (one(rand_tensor(r, &d, -3.0, 3.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.sigmoid(x);
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "relu",
            make: |r| {
                let d = small_dims(r, 2);
                (one(away_from_zero(r, &d)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.relu(x);
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "gelu",
            make: |r| {
                let d = small_dims(r, 2);
                (one(rand_tensor(r, &d, -3.0, 3.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.gelu(x);
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "softmax",
            make: |r| {
                let mut d = small_dims(r, 2);
                d[1] += 1;
                (one(rand_tensor(r, &d, -2.0, 2.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.softmax(x)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "masked_softmax",
            make: |r| {
                let mut d = small_dims(r, 2);
                d[1] += 2;
                let mut c = ctx(d.clone());
                c.keep = (0..d[0] * d[1]).map(|i| i % d[1] == 0 || r.random::<bool>()).collect();
                (one(rand_tensor(r, &d, -2.0, 2.0)), c)
            },
            build: |g, p, c| {
                let x = g.param(p, "x")?;
                let o = g.masked_softmax(x, &c.keep)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "log_softmax",
            make: |r| {
                let mut d = small_dims(r, 2);
                d[1] += 1;
                (one(rand_tensor(r, &d, -2.0, 2.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.log_softmax(x)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "cross_entropy",
            make: |r| {
                let n = r.random_range(1..5);
                let k = r.random_range(2..6);
                let mut c = ctx(vec![n, k]);
                c.targets = (0..n).map(|i| if i == 0 || r.random::<bool>() { Some(r.random_range(0..k)) } else { None }).collect();
                (one(rand_tensor(r, &[n, k], -2.0, 2.0)), c)
            },
            build: |g, p, c| {
                let x = g.param(p, "x")?;
                g.cross_entropy(x, &c.targets)
            },
            training: false,
        },
        Case {
            name: "layer_norm",
            make: |r| {
                let mut d = small_dims(r, 2);
                d[1] += 2;
                // ramp + jitter keeps every row's variance well above zero,
                // where the normalizer's higher derivatives stay moderate
                let w = d[1];
                let x = Tensor::from_fn(&d, |i| {
                    T::from_f64((i % w) as f64 - w as f64 / 2.0 + r.random_range(-0.4..0.4)).unwrap()
                });
                (one(x), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.layer_norm(x, 1e-5)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "dropout",
            make: |r| {
                let d = small_dims(r, 2);
                (one(rand_tensor(r, &d, -2.0, 2.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.dropout(x, 0.3)?;
                weighted(g, p, o)
            },
            training: true,
        },
        Case {
            name: "conv1d_valid",
            make: |r| {
                let (b, ci, co, k) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4), r.random_range(1..4));
                let l = k + r.random_range(0..4);
                let x = rand_tensor(r, &[b, l, ci], -1.0, 1.0);
                let w = rand_tensor(r, &[k, ci, co], -1.0, 1.0);
                (two(x, w), ctx(vec![0]))
            },
            build: |g, p, c| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.conv1d(x, y, c.dims[0])?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "conv1d_padded",
            make: |r| {
                let (b, ci, co) = (r.random_range(1..3), r.random_range(1..4), r.random_range(1..4));
                let l = r.random_range(1..6);
                let x = rand_tensor(r, &[b, l, ci], -1.0, 1.0);
                let w = rand_tensor(r, &[3, ci, co], -1.0, 1.0);
                (two(x, w), ctx(vec![1]))
            },
            build: |g, p, c| {
                let (x, y) = (g.param(p, "x")?, g.param(p, "y")?);
                let o = g.conv1d(x, y, c.dims[0])?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "max_over_time",
            make: |r| {
                let d = small_dims(r, 3);
                (one(spread(r, &d)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.max_over_time(x)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "max_pool1d",
            make: |r| {
                let d = vec![r.random_range(1..3), r.random_range(1..9), r.random_range(1..3)];
                (one(spread(r, &d)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let o = g.max_pool1d(x, 3, 2)?;
                weighted(g, p, o)
            },
            training: false,
        },
        Case {
            name: "mean",
            make: |r| {
                let d = small_dims(r, 3);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let sq = g.mul(x, x)?;
                Ok(g.mean(sq))
            },
            training: false,
        },
        Case {
            name: "sum",
            make: |r| {
                let d = small_dims(r, 3);
                (one(rand_tensor(r, &d, -1.0, 1.0)), ctx(d))
            },
            build: |g, p, _| {
                let x = g.param(p, "x")?;
                let t = g.tanh(x);
                Ok(g.sum(t))
            },
            training: false,
        },
    ]
}

/// Worst relative error of each op over all instances, in case order.
pub fn run_suite<T: Float>(h: f64, floor: f64) -> Vec<(&'static str, GradCheck)> {
    let mut out = Vec::new();
    for case in cases::<T>() {
        let mut worst: Option<GradCheck> = None;
        for inst in 0..INSTANCES {
            let mut rng = init_rng(inst, case.name);
            let (params, c) = (case.make)(&mut rng);
            let build = case.build;
            let training = case.training;
            let report = check_params_in(
                || if training { Graph::training(inst) } else { Graph::new() },
                &params,
                |g, p| build(g, p, &c),
                h,
                64,
                floor,
                inst,
            )
            .unwrap_or_else(|e| panic!("{} instance {inst}: {e}", case.name));
            if worst.as_ref().is_none_or(|w| report.max_rel_error > w.max_rel_error) {
                worst = Some(report);
            }
        }
        out.push((case.name, worst.expect("at least one instance")));
    }
    out
}
