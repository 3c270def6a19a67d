use ndgrad::{Float, Graph, Params, Tensor, Var};

use crate::error::Result;

/// Uniform(±1/sqrt(hidden)) weights and a forget-gate bias of 1.
pub(crate) fn init_lstm<T: Float>(p: &mut Params<T>, seed: u64, name: &str, input: usize, hidden: usize) {
    let bound = 1.0 / (hidden as f64).sqrt();
    p.init_uniform(seed, &format!("{name}.w"), &[input, 4 * hidden], bound);
    p.init_uniform(seed, &format!("{name}.u"), &[hidden, 4 * hidden], bound);
    let mut b = vec![T::zero(); 4 * hidden];
    for v in &mut b[hidden..2 * hidden] {
        *v = T::one();
    }
    p.insert(format!("{name}.b"), Tensor::new(vec![4 * hidden], b).unwrap());
}

pub(crate) struct LstmOutput {
    /// `[batch, len, hidden]`, in input order for both directions.
    pub states: Var,
    /// Hidden state after the last real token in the direction of travel.
    pub last: Var,
}

/// Single-layer LSTM over `x: [batch, len, input]`. Padded steps (`mask`
/// false) carry the previous state through unchanged, so the final state of
/// each row is the one reached at its last real token.
pub(crate) fn lstm<T: Float>(g: &mut Graph<T>, p: &Params<T>, name: &str, x: Var, mask: &[bool], reverse: bool) -> Result<LstmOutput> {
    let s = g.shape(x).to_vec();
    let (b, l) = (s[0], s[1]);
    let u = g.param(p, &format!("{name}.u"))?;
    let hdim = g.shape(u)[0];
    let w = g.param(p, &format!("{name}.w"))?;
    let bias = g.param(p, &format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    let xw = g.add(xw, bias)?;

    let mut h = g.constant(Tensor::zeros(&[b, hdim]));
    let mut c = g.constant(Tensor::zeros(&[b, hdim]));
    let mut outs = vec![None; l];
    let order: Vec<usize> = if reverse { (0..l).rev().collect() } else { (0..l).collect() };
    for t in order {
        let xt = g.slice(xw, 1, t, t + 1)?;
        let xt = g.reshape(xt, &[b, 4 * hdim])?;
        let hu = g.matmul(h, u)?;
        let gates = g.add(xt, hu)?;
        let i = g.slice(gates, 1, 0, hdim)?;
        let f = g.slice(gates, 1, hdim, 2 * hdim)?;
        let cand = g.slice(gates, 1, 2 * hdim, 3 * hdim)?;
        let o = g.slice(gates, 1, 3 * hdim, 4 * hdim)?;
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let cand = g.tanh(cand);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c_new = g.add(fc, ig)?;
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc)?;
        if (0..b).all(|r| mask[r * l + t]) {
            (h, c) = (h_new, c_new);
        } else {
            let m = g.constant(Tensor::from_fn(&[b, hdim], |k| {
                if mask[(k / hdim) * l + t] {
                    T::one()
                } else {
                    T::zero()
                }
            }));
            h = carry(g, h, h_new, m)?;
            c = carry(g, c, c_new, m)?;
        }
        outs[t] = Some(g.reshape(h, &[b, 1, hdim])?);
    }
    let outs: Vec<Var> = outs.into_iter().map(Option::unwrap).collect();
    let states = g.concat(&outs, 1)?;
    Ok(LstmOutput { states, last: h })
}

/// `old + m * (new - old)`
fn carry<T: Float>(g: &mut Graph<T>, old: Var, new: Var, m: Var) -> Result<Var> {
    let d = g.sub(new, old)?;
    let d = g.mul(d, m)?;
    Ok(g.add(old, d)?)
}

/// Forward and backward passes concatenated per token: `[batch, len, 2h]`,
/// plus the two final states concatenated: `[batch, 2h]`.
pub(crate) fn bilstm<T: Float>(g: &mut Graph<T>, p: &Params<T>, name: &str, x: Var, mask: &[bool]) -> Result<(Var, Var, LstmOutput, LstmOutput)> {
    let fwd = lstm(g, p, &format!("{name}.fwd"), x, mask, false)?;
    let bwd = lstm(g, p, &format!("{name}.bwd"), x, mask, true)?;
    let states = g.concat(&[fwd.states, bwd.states], 2)?;
    let last = g.concat(&[fwd.last, bwd.last], 1)?;
    Ok((states, last, fwd, bwd))
}
