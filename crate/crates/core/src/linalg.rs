//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Matrices whose condition number exceeds this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Divisor of the sample covariance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// `N - 1`, the unbiased estimator.
    #[default]
    #[serde(rename = "n-1")]
    Unbiased,
    /// `N`, the maximum-likelihood estimator.
    #[serde(rename = "n")]
    Population,
}

impl Divisor {
    pub fn value(self, n: usize) -> f64 {
        match self {
            Divisor::Unbiased => (n - 1) as f64,
            Divisor::Population => n as f64,
        }
    }
}

impl std::fmt::Display for Divisor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Divisor::Unbiased => "n-1",
            Divisor::Population => "n",
        })
    }
}

impl std::str::FromStr for Divisor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n-1" | "unbiased" => Ok(Divisor::Unbiased),
            "n" | "population" => Ok(Divisor::Population),
            other => Err(format!("unknown divisor {other:?} (expected n-1 or n)")),
        }
    }
}

/// Subtracts column means. Constant columns become exactly zero.
pub fn center_columns(values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    for mut column in out.column_iter_mut() {
        let first = column[0];
        if column.iter().all(|&v| v == first) {
            column.fill(0.0);
            continue;
        }
        let mean = column.iter().sum::<f64>() / column.len() as f64;
        column.add_scalar_mut(-mean);
    }
    out
}

/// Sample covariance of the columns of `values` (rows are samples).
///
/// Sums run sequentially over rows, so the result does not depend on how
/// the caller schedules work; the output is exactly symmetric.
pub fn covariance(values: &DMatrix<f64>, divisor: Divisor) -> DMatrix<f64> {
    let centered = center_columns(values);
    let k = centered.ncols();
    let denom = divisor.value(centered.nrows());
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let s: f64 = centered
                .column(i)
                .iter()
                .zip(centered.column(j).iter())
                .map(|(a, b)| a * b)
                .sum();
            cov[(i, j)] = s / denom;
            cov[(j, i)] = s / denom;
        }
    }
    cov
}

pub fn variance(values: &DVector<f64>, divisor: Divisor) -> f64 {
    let mean = values.mean();
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / divisor.value(values.len())
}

pub fn correlation(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let (ma, mb) = (a.mean(), b.mean());
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix; infinite
/// when the smallest is zero.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a symmetric positive definite matrix, or the condition number
/// that made it fail.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let condition = condition_number(m);
    if !(condition <= MAX_CONDITION) {
        return Err(condition);
    }
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or(condition)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Moore–Penrose pseudoinverse of a symmetric matrix. Eigenvalues at or
/// below `relative_tolerance` times the largest are treated as zero.
/// Returns `None` for the zero matrix.
pub fn pinv_symmetric(m: &DMatrix<f64>, relative_tolerance: f64) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let largest = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if largest == 0.0 {
        return None;
    }
    let inverted = eig.eigenvalues.map(|v| {
        if v.abs() > relative_tolerance * largest {
            1.0 / v
        } else {
            0.0
        }
    });
    let q = &eig.eigenvectors;
    Some(symmetrize(&(q * DMatrix::from_diagonal(&inverted) * q.transpose())))
}

/// Largest absolute entry of `a - b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_columns_center_to_exact_zero() {
        let m = DMatrix::from_row_slice(3, 2, &[0.1, 1.0, 0.1, 2.0, 0.1, 4.0]);
        let c = covariance(&m, Divisor::Unbiased);
        assert_eq!(c[(0, 0)], 0.0);
        assert_eq!(c[(0, 1)], 0.0);
        assert!((c[(1, 1)] - 7.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn divisor_parsing() {
        assert_eq!("n-1".parse::<Divisor>().unwrap(), Divisor::Unbiased);
        assert_eq!("n".parse::<Divisor>().unwrap(), Divisor::Population);
        assert!("m".parse::<Divisor>().is_err());
    }

    #[test]
    fn singular_matrix_is_refused() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(invert_spd(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let inv = invert_spd(&m).unwrap();
        assert!(max_abs_diff(&(m * inv), &DMatrix::identity(2, 2)) < 1e-15);
    }
}
