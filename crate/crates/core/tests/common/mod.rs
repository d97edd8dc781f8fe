#![allow(dead_code)]

use coda_pcor::composition::{close, CompositionMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use coda_pcor::synthetic::lognormal;

pub fn max_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random permutation of `0..len`.
pub fn random_order(rng: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// Multiplies each row by a random positive factor and closes again.
pub fn rescale_rows(x: &CompositionMatrix, seed: u64) -> CompositionMatrix {
    let mut r = rng(seed);
    let mut values = x.values().clone();
    for mut row in values.row_iter_mut() {
        row *= r.random_range(1e-3..1e3);
    }
    close(&values).unwrap()
}

/// Composition whose single row is `row`, repeated twice so closure
/// accepts it.
pub fn single_row(row: &[f64]) -> CompositionMatrix {
    let d = row.len();
    let mut data = row.to_vec();
    data.extend_from_slice(row);
    close(&DMatrix::from_row_slice(2, d, &data)).unwrap()
}
