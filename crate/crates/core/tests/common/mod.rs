#![allow(dead_code)]

use marblr_core::LabeledBatch;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `t_steps` batches of `n` rows `[1, x…]` with `x ~ U(−2, 2)` and outcomes
/// drawn from `theta`.
pub fn logistic_stream(seed: u64, t_steps: usize, n: usize, theta: &DVector<f64>) -> Vec<LabeledBatch<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = theta.len();
    (0..t_steps)
        .map(|_| {
            let z = DMatrix::from_fn(n, d, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
            let y = (0..n)
                .map(|i| u8::from(rng.random::<f64>() < sigmoid(z.row(i).dot(&theta.transpose()))))
                .collect();
            LabeledBatch::new(z, y).unwrap()
        })
        .collect()
}
