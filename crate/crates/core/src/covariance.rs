//! The compositional covariance specifications and the pseudoinverse of the
//! clr covariance.
//!
//! Three equivalent descriptions of the covariance structure are supported:
//! the alr covariance `Σ` (reference part `d`), the singular clr covariance
//! `Γ`, and the variation matrix `T` of pairwise log-ratio variances. They
//! are linked by `Σ = F Γ Fᵀ` and `τ_ij = γ_ii + γ_jj - 2 γ_ij`.
//!
//! The pseudoinverse `Γ⁻` is computed from the identity `Γ⁻ = Fᵀ Σ⁻¹ F`.
//! Because that identity is invariant under relabelling of the parts, any
//! reference part may be used to build `Σ`; [`pseudo_inverse_eigen`] gives an
//! independent route through the eigendecomposition of `Γ`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::composition::{alr_transform, clr, CompositionMatrix};
use crate::error::{Error, Result};
use crate::linalg::{covariance, invert_spd, pinv_symmetric, symmetrize, Divisor};
use crate::structural::{f_matrix, h_inverse, Permutation};

/// Relative eigenvalue threshold below which the eigen route treats an
/// eigenvalue as zero.
pub const EIGEN_ZERO_TOLERANCE: f64 = 1e-10;

/// Covariance of alr coordinates with reference part `ref_part`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlrCovariance {
    /// `(D-1) x (D-1)`, rows/columns in original part order minus `ref_part`.
    pub sigma: DMatrix<f64>,
    pub ref_part: usize,
    pub divisor: Option<Divisor>,
}

impl AlrCovariance {
    pub fn n_parts(&self) -> usize {
        self.sigma.nrows() + 1
    }

    /// `Σ⁻¹`, refusing matrices with condition number above
    /// [`MAX_CONDITION`](crate::linalg::MAX_CONDITION).
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.sigma).map_err(|condition| Error::SingularCovariance { condition })
    }
}

/// Covariance `Γ` of clr coordinates (`D x D`, singular).
#[derive(Debug, Clone, PartialEq)]
pub struct ClrCovariance {
    pub gamma: DMatrix<f64>,
    pub divisor: Option<Divisor>,
}

impl ClrCovariance {
    /// Wraps an externally supplied `Γ`. Only the shape is checked.
    pub fn from_matrix(gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::DimensionMismatch {
                expected: "square matrix".into(),
                found: format!("{}x{}", gamma.nrows(), gamma.ncols()),
            });
        }
        if gamma.nrows() < 2 {
            return Err(Error::DimensionTooSmall {
                what: "number of parts",
                found: gamma.nrows(),
                min: 2,
            });
        }
        Ok(Self {
            gamma,
            divisor: None,
        })
    }

    pub fn n_parts(&self) -> usize {
        self.gamma.nrows()
    }

    /// `trace(Γ)`, the total variance.
    pub fn total_variance(&self) -> f64 {
        self.gamma.trace()
    }
}

/// Which construction produced a [`ClrPseudoInverse`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoInverseRoute {
    /// `Fᵀ Σ⁻¹ F` with `Σ` built for `reference`, optionally shrunk.
    AlrInverse {
        reference: usize,
        shrinkage: Option<f64>,
    },
    /// Inverting the non-zero eigenvalues of `Γ`.
    Eigen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClrPseudoInverse {
    pub gamma_pinv: DMatrix<f64>,
    pub source: PseudoInverseRoute,
}

impl ClrPseudoInverse {
    pub fn n_parts(&self) -> usize {
        self.gamma_pinv.nrows()
    }
}

/// Variation matrix: `τ_ij = var(log(X_i / X_j))`.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationMatrix {
    pub tau: DMatrix<f64>,
}

fn require_samples(x: &CompositionMatrix) -> Result<()> {
    if x.n_samples() < 3 {
        return Err(Error::DimensionTooSmall {
            what: "number of samples",
            found: x.n_samples(),
            min: 3,
        });
    }
    Ok(())
}

/// Sample covariance of the alr coordinates with reference `part`.
///
/// Identical rows give an exactly zero matrix; degeneracy is reported when
/// the matrix is inverted.
pub fn estimate_sigma(x: &CompositionMatrix, part: usize, divisor: Divisor) -> Result<AlrCovariance> {
    require_samples(x)?;
    let y = alr_transform(x, part)?;
    Ok(AlrCovariance {
        sigma: covariance(&y.values, divisor),
        ref_part: part,
        divisor: Some(divisor),
    })
}

/// Sample covariance of the clr coordinates.
pub fn estimate_gamma(x: &CompositionMatrix, divisor: Divisor) -> Result<ClrCovariance> {
    require_samples(x)?;
    Ok(ClrCovariance {
        gamma: covariance(&clr(x).values, divisor),
        divisor: Some(divisor),
    })
}

/// `F P Γ Pᵀ Fᵀ`, where `P` moves `part` to the last slot.
pub fn sigma_from_gamma(gamma: &ClrCovariance, part: usize) -> Result<AlrCovariance> {
    let dim = gamma.n_parts();
    let p = Permutation::moving_to_last(dim, part)?.to_matrix();
    let fp = f_matrix(dim) * p;
    Ok(AlrCovariance {
        sigma: symmetrize(&(&fp * &gamma.gamma * fp.transpose())),
        ref_part: part,
        divisor: gamma.divisor,
    })
}

/// `Pᵀ Fᵀ H⁻¹ Σ H⁻¹ F P`, the inverse of [`sigma_from_gamma`] on matrices
/// whose rows sum to zero.
pub fn gamma_from_sigma(sigma: &AlrCovariance) -> Result<ClrCovariance> {
    let dim = sigma.n_parts();
    if !sigma.sigma.is_square() || sigma.ref_part >= dim {
        return Err(Error::DimensionMismatch {
            expected: format!("square alr covariance with reference below {dim}"),
            found: format!(
                "{}x{} with reference {}",
                sigma.sigma.nrows(),
                sigma.sigma.ncols(),
                sigma.ref_part
            ),
        });
    }
    let p = Permutation::moving_to_last(dim, sigma.ref_part)?.to_matrix();
    let right_inverse = h_inverse(dim) * f_matrix(dim) * p;
    Ok(ClrCovariance {
        gamma: symmetrize(&(right_inverse.transpose() * &sigma.sigma * &right_inverse)),
        divisor: sigma.divisor,
    })
}

/// Options for [`pseudo_inverse`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PseudoInverseOptions {
    /// Reference part used to build `Σ`; defaults to the last part.
    pub reference: Option<usize>,
    /// Shrinkage intensity applied to `Σ` before inversion.
    pub shrinkage: Option<f64>,
}

/// `Γ⁻ = Pᵀ Fᵀ Σ⁻¹ F P`, with `Σ` built for the chosen reference.
pub fn pseudo_inverse(
    gamma: &ClrCovariance,
    options: PseudoInverseOptions,
) -> Result<ClrPseudoInverse> {
    let dim = gamma.n_parts();
    let reference = options.reference.unwrap_or(dim - 1);
    let mut sigma = sigma_from_gamma(gamma, reference)?;
    check_nondegenerate(&sigma)?;
    if let Some(lambda) = options.shrinkage {
        sigma = shrink(&sigma, lambda)?;
    }
    let sigma_inv = sigma.inverse()?;
    let fp = f_matrix(dim) * Permutation::moving_to_last(dim, reference)?.to_matrix();
    Ok(ClrPseudoInverse {
        gamma_pinv: symmetrize(&(fp.transpose() * sigma_inv * fp)),
        source: PseudoInverseRoute::AlrInverse {
            reference,
            shrinkage: options.shrinkage,
        },
    })
}

fn check_nondegenerate(sigma: &AlrCovariance) -> Result<()> {
    let parts: Vec<usize> = (0..sigma.n_parts()).filter(|&i| i != sigma.ref_part).collect();
    for (k, &part) in parts.iter().enumerate() {
        if !(sigma.sigma[(k, k)] > 0.0) {
            return Err(Error::DegenerateData(format!(
                "log-ratio of part {part} to part {} has zero variance",
                sigma.ref_part
            )));
        }
    }
    Ok(())
}

/// Moore–Penrose pseudoinverse of `Γ` through its eigendecomposition.
///
/// Eigenvalues below [`EIGEN_ZERO_TOLERANCE`] times the largest one are
/// treated as zero. Used as an independent check of [`pseudo_inverse`].
pub fn pseudo_inverse_eigen(gamma: &ClrCovariance) -> Result<ClrPseudoInverse> {
    let gamma_pinv = pinv_symmetric(&gamma.gamma, EIGEN_ZERO_TOLERANCE)
        .ok_or_else(|| Error::DegenerateData("clr covariance is zero".into()))?;
    Ok(ClrPseudoInverse {
        gamma_pinv,
        source: PseudoInverseRoute::Eigen,
    })
}

/// Pairwise log-ratio variances, computed from their definition.
pub fn variation_matrix(x: &CompositionMatrix, divisor: Divisor) -> Result<VariationMatrix> {
    require_samples(x)?;
    let logs = x.log_values();
    let dim = x.n_parts();
    let mut tau = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let ratio = DMatrix::from_column_slice(
                logs.nrows(),
                1,
                (logs.column(i) - logs.column(j)).as_slice(),
            );
            let v = covariance(&ratio, divisor)[(0, 0)];
            tau[(i, j)] = v;
            tau[(j, i)] = v;
        }
    }
    Ok(VariationMatrix { tau })
}

impl VariationMatrix {
    /// `γ_ii + γ_jj - 2 γ_ij`.
    pub fn from_gamma(gamma: &ClrCovariance) -> Self {
        let g = &gamma.gamma;
        let dim = g.nrows();
        let tau = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j {
                0.0
            } else {
                g[(i, i)] + g[(j, j)] - 2.0 * g[(i, j)]
            }
        });
        Self { tau }
    }
}

/// Linear shrinkage towards the diagonal: `(1 - λ) Σ + λ diag(Σ)`.
pub fn shrink(sigma: &AlrCovariance, lambda: f64) -> Result<AlrCovariance> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    let s = &sigma.sigma;
    let shrunk = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| {
        if i == j {
            s[(i, j)]
        } else {
            (1.0 - lambda) * s[(i, j)]
        }
    });
    Ok(AlrCovariance {
        sigma: shrunk,
        ..sigma.clone()
    })
}
