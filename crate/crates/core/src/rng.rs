//! Seeded random sources for parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal};

use crate::tensor::Tensor;

pub type GateRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> GateRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mask logits: each row is drawn i.i.d. from its own `Beta(a, b)` with
/// `a, b ~ U[0.5, 10]`.
pub fn beta_mask(rng: &mut GateRng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let a = rng.random_range(0.5..=10.0);
        let b = rng.random_range(0.5..=10.0);
        let dist = Beta::new(a, b).expect("shape parameters are positive");
        data.extend((0..cols).map(|_| dist.sample(rng)));
    }
    Tensor::new(rows, cols, data).expect("length matches shape")
}

pub fn uniform(rng: &mut GateRng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

pub fn normal(rng: &mut GateRng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("standard deviation is finite");
    Tensor::from_fn(rows, cols, |_, _| dist.sample(rng))
}
