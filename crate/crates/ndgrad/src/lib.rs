//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value and enough saved state to run its backward rule. Nodes are pushed in
//! execution order, so the tape is always topologically sorted and
//! [`Graph::backward`] is a single reverse sweep.
//!
//! Trainable weights live outside the tape in a [`Params`] store. A training
//! step builds a fresh graph, pulls parameters in with [`Graph::param`], runs
//! backward, collects [`Gradients`] and hands them to an [`Optimizer`].
//!
//! ```
//! use ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod error;
mod float;
pub mod gradcheck;
mod graph;
mod kernels;
mod ops;
mod optim;
mod params;
mod tensor;

pub use error::{GradError, Result};
pub use float::{lit, Float};
pub use graph::{CustomOp, Graph, Var};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{init_rng, Gradients, Params};
pub use tensor::Tensor;
