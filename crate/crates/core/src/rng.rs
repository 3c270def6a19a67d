//! Named sub-streams of the single run seed (split, init, shuffle, mask, ...).

use rand_chacha::ChaCha8Rng;

pub use ndgrad::init_rng;

pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    init_rng(seed, name)
}
