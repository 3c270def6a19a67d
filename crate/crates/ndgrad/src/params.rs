use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, GradError, Result};
use crate::float::Float;
use crate::tensor::Tensor;

/// Per-parameter gradients keyed by parameter name.
pub type Gradients<T> = IndexMap<String, Tensor<T>>;

/// Independent RNG stream for `(seed, name)`. Two components that draw from
/// differently named streams never perturb each other's sequences.
pub fn init_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Named, insertion-ordered set of trainable tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Params<T: Float> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Float> Params<T> {
    pub fn new() -> Self {
        Self {
            tensors: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| GradError::UnknownParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Normal(0, std) tensor drawn from the stream named after the parameter.
    pub fn init_normal(&mut self, seed: u64, name: &str, shape: &[usize], std: f64) {
        let mut rng = init_rng(seed, name);
        let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let t = Tensor::from_fn(shape, |_| T::from_f64(dist.sample(&mut rng)).unwrap());
        self.insert(name, t);
    }

    /// Uniform(-bound, bound) tensor drawn from the stream named after the parameter.
    pub fn init_uniform(&mut self, seed: u64, name: &str, shape: &[usize], bound: f64) {
        let mut rng = init_rng(seed, name);
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..=bound)).unwrap());
        self.insert(name, t);
    }

    pub fn init_const(&mut self, name: &str, shape: &[usize], value: f64) {
        self.insert(name, Tensor::full(shape, T::from_f64(value).unwrap()));
    }

    /// Overwrites `name` keeping its shape.
    pub fn assign(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        let slot = self
            .tensors
            .get_mut(name)
            .ok_or_else(|| GradError::UnknownParameter(name.to_string()))?;
        if slot.shape() != t.shape() {
            return Err(invalid(
                "assign",
                format!("`{name}` has shape {:?}, got {:?}", slot.shape(), t.shape()),
            ));
        }
        *slot = t;
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> Params<U> {
        Params {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }
}
