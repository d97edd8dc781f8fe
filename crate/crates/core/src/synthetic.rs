//! Seeded synthetic compositions for tests, self-checks and examples.
//!
//! Every generator draws from `ChaCha8Rng::seed_from_u64(seed)`, so the same
//! arguments always give the same matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::composition::{close, CompositionMatrix};
use crate::error::{Error, Result};
use crate::linalg::pinv_symmetric;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // filled row by row so the draw order does not depend on storage layout
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    m
}

fn from_logs(logs: DMatrix<f64>) -> Result<CompositionMatrix> {
    close(&logs.map(f64::exp))
}

/// Lognormal composition with correlated logs: `log X = Z (I + A/2) + μ`,
/// where `Z` and `A` are standard normal and `μ` is a per-part offset.
pub fn lognormal(n_samples: usize, n_parts: usize, seed: u64) -> Result<CompositionMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixing = DMatrix::identity(n_parts, n_parts) + normal_matrix(&mut rng, n_parts, n_parts) * 0.5;
    let offsets = normal_matrix(&mut rng, 1, n_parts);
    let z = normal_matrix(&mut rng, n_samples, n_parts);
    let mut logs = z * mixing;
    for mut row in logs.row_iter_mut() {
        row += &offsets;
    }
    from_logs(logs)
}

/// Independent lognormal parts with common log standard deviation `sigma`;
/// the population clr covariance is `σ² (I - J/D)`.
pub fn iid_lognormal(
    n_samples: usize,
    n_parts: usize,
    sigma: f64,
    seed: u64,
) -> Result<CompositionMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    from_logs(normal_matrix(&mut rng, n_samples, n_parts) * sigma)
}

/// Independent lognormal parts except that `log X_j = log X_i + noise`
/// with noise standard deviation `noise`, planting one strong partial
/// dependence between parts `i` and `j`.
pub fn planted_pair(
    n_samples: usize,
    n_parts: usize,
    (i, j): (usize, usize),
    noise: f64,
    seed: u64,
) -> Result<CompositionMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = normal_matrix(&mut rng, n_samples, n_parts);
    for r in 0..n_samples {
        logs[(r, j)] = logs[(r, i)] + noise * logs[(r, j)];
    }
    from_logs(logs)
}

/// Composition whose clr covariance has population pseudoinverse
/// `precision`. The precision must be symmetric positive semidefinite with
/// rows summing to zero and rank `D - 1`; partial correlations between
/// parts are then `-K_ij / sqrt(K_ii K_jj)`.
pub fn with_clr_precision(
    n_samples: usize,
    precision: &DMatrix<f64>,
    seed: u64,
) -> Result<CompositionMatrix> {
    let d = precision.nrows();
    if !precision.is_square() || precision.row_sum().amax() > 1e-10 * precision.amax() {
        return Err(Error::InvalidConfig(
            "clr precision must be square with rows summing to zero".into(),
        ));
    }
    let covariance = pinv_symmetric(precision, 1e-12)
        .ok_or_else(|| Error::InvalidConfig("clr precision is zero".into()))?;
    let eig = SymmetricEigen::new(covariance);
    let root = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()))
        * eig.eigenvectors.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normal_matrix(&mut rng, n_samples, d);
    from_logs(z * root)
}
