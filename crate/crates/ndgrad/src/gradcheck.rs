//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it checks.

use rand::seq::index::sample;

use crate::error::Result;
use crate::float::Float;
use crate::graph::{Graph, Var};
use crate::params::{init_rng, Params};

/// Worst disagreement found by [`check_params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps entries whose true
/// gradient is ~0 from reporting huge ratios of rounding noise.
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients of the scalar built by `loss` against central
/// differences with step `h`. At most `per_tensor` randomly chosen entries of
/// each parameter are perturbed.
pub fn check_params<T, F>(params: &Params<T>, loss: F, h: f64, per_tensor: usize, floor: f64, seed: u64) -> Result<GradCheck>
where
    T: Float,
    F: Fn(&mut Graph<T>, &Params<T>) -> Result<Var>,
{
    check_params_in(Graph::new, params, loss, h, per_tensor, floor, seed)
}

/// As [`check_params`], building every graph with `make_graph`. Use a seeded
/// training graph to check stochastic ops under a fixed mask.
pub fn check_params_in<T, F, M>(
    make_graph: M,
    params: &Params<T>,
    loss: F,
    h: f64,
    per_tensor: usize,
    floor: f64,
    seed: u64,
) -> Result<GradCheck>
where
    T: Float,
    F: Fn(&mut Graph<T>, &Params<T>) -> Result<Var>,
    M: Fn() -> Graph<T>,
{
    let mut g = make_graph();
    let l = loss(&mut g, params)?;
    g.backward(l)?;
    let analytic = g.param_grads();

    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let eval = |p: &Params<T>| -> Result<f64> {
        let mut g = make_graph();
        let l = loss(&mut g, p)?;
        Ok(g.value(l).item().to_f64().unwrap())
    };
    let mut work = params.clone();
    for (name, grad) in &analytic {
        let n = grad.len();
        let mut rng = init_rng(seed, name);
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            sample(&mut rng, n, per_tensor).into_vec()
        };
        for idx in picks {
            let orig = work.get(name).unwrap().data()[idx];
            let hh = T::from_f64(h).unwrap();
            work.get_mut(name).unwrap().data_mut()[idx] = orig + hh;
            let up = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig - hh;
            let down = eval(&work)?;
            work.get_mut(name).unwrap().data_mut()[idx] = orig;
            // the actual perturbation after rounding to T
            let step = ((orig + hh) - (orig - hh)).to_f64().unwrap();
            let numeric = (up - down) / step;
            let a = grad.data()[idx].to_f64().unwrap();
            let e = rel_error(a, numeric, floor);
            report.checked += 1;
            if e > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = e.max(report.max_rel_error);
                report.worst_param = name.clone();
                report.worst_index = idx;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
