use indexmap::IndexMap;

use crate::error::{invalid, GradError, Result};
use crate::float::Float;
use crate::params::{Gradients, Params};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over a fixed set of registered parameters.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Float> {
    kind: OptimizerKind,
    lr: T,
    step: u64,
    // (first moment, second moment); empty for sgd
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Float> Optimizer<T> {
    /// Registers every parameter in `params` whose name satisfies `trainable`.
    pub fn new(kind: OptimizerKind, lr: f64, params: &Params<T>, trainable: impl Fn(&str) -> bool) -> Self {
        let moments = params
            .iter()
            .filter(|(name, _)| trainable(name))
            .map(|(name, t)| {
                let m = match kind {
                    OptimizerKind::Sgd => (Vec::new(), Vec::new()),
                    OptimizerKind::Adam => (vec![T::zero(); t.len()], vec![T::zero(); t.len()]),
                };
                (name.clone(), m)
            })
            .collect();
        Self {
            kind,
            lr: T::from_f64(lr).unwrap(),
            step: 0,
            moments,
        }
    }

    pub fn adam(lr: f64, params: &Params<T>) -> Self {
        Self::new(OptimizerKind::Adam, lr, params, |_| true)
    }

    pub fn sgd(lr: f64, params: &Params<T>) -> Self {
        Self::new(OptimizerKind::Sgd, lr, params, |_| true)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::from_f64(lr).unwrap();
    }

    pub fn registered(&self) -> impl Iterator<Item = &String> {
        self.moments.keys()
    }

    /// One update of every registered parameter. Fails without touching any
    /// parameter if a registered one has no gradient.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Gradients<T>) -> Result<()> {
        for name in self.moments.keys() {
            let g = grads.get(name).ok_or_else(|| GradError::MissingGradient(name.clone()))?;
            let p = params.require(name)?;
            if p.shape() != g.shape() {
                return Err(invalid(
                    "optimizer_step",
                    format!("`{name}` param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let b1 = T::from_f64(ADAM_BETA1).unwrap();
        let b2 = T::from_f64(ADAM_BETA2).unwrap();
        let eps = T::from_f64(ADAM_EPS).unwrap();
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for (name, (m, v)) in self.moments.iter_mut() {
            let g = grads[name].data();
            let p = params.get_mut(name).expect("checked above").data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= self.lr * *gi;
                    }
                }
                OptimizerKind::Adam => {
                    for k in 0..p.len() {
                        m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                        v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                        let mh = m[k] / c1;
                        let vh = v[k] / c2;
                        p[k] -= self.lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
