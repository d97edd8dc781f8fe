//! Partial variances, partial correlations and R² for compositions.
//!
//! The residual of a log-ratio `log(X_j / ref)` after linear regression on
//! the log-ratios among a set of controlled parts does not depend on `ref`,
//! as long as the reference is one of the controlled parts or their
//! geometric mean. Partial variances and correlations are therefore
//! properties of the parts themselves, and all of them follow from a single
//! pseudoinverse `Γ⁻` of the clr covariance:
//!
//! ```text
//! σ²_{j|rest}  = 1 / γ⁻_jj
//! r_{ij|rest}  = -γ⁻_ij / sqrt(γ⁻_ii γ⁻_jj)
//! ```
//!
//! The explicit regression functions ([`llsp`], [`residual_of_part`]) are
//! slower but make the reference-independence directly observable; the
//! test suite uses them as the oracle for the shortcut formulas.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::composition::{
    subclr_transform, validate_index_set, CompositionMatrix, LogRatioMatrix, ReferenceSpec,
};
use crate::covariance::{
    estimate_gamma, pseudo_inverse, sigma_from_gamma, AlrCovariance, ClrCovariance,
    ClrPseudoInverse, PseudoInverseOptions,
};
use crate::error::{Error, Result};
use crate::linalg::{
    center_columns, correlation, covariance, invert_spd, pinv_symmetric, Divisor,
};

/// Linear least squares predictor of a target on explanatory log-ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct LlspResult {
    pub coefficients: DVector<f64>,
    pub predictor_values: DVector<f64>,
    pub residual_values: DVector<f64>,
    /// Target after centering; `predictor + residual = target`.
    pub target_values: DVector<f64>,
    pub explanatory: ReferenceSpec,
    pub explanatory_labels: Vec<String>,
}

/// Regresses the (centered) `target` on the (centered) explanatory columns:
/// `coefficients = var(E)⁻¹ cov(E, target)`.
///
/// An explanatory matrix without columns yields a zero predictor.
pub fn llsp(target: &DVector<f64>, explanatory: &LogRatioMatrix) -> Result<LlspResult> {
    let fit = fit_llsp(target, &explanatory.values)?;
    Ok(LlspResult {
        coefficients: fit.coefficients,
        predictor_values: fit.predictor,
        residual_values: fit.residual,
        target_values: fit.target,
        explanatory: explanatory.reference.clone(),
        explanatory_labels: explanatory.part_labels.clone(),
    })
}

struct Fit {
    coefficients: DVector<f64>,
    predictor: DVector<f64>,
    residual: DVector<f64>,
    target: DVector<f64>,
}

fn fit_llsp(target: &DVector<f64>, explanatory: &DMatrix<f64>) -> Result<Fit> {
    if explanatory.nrows() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} samples", target.len()),
            found: format!("{} explanatory rows", explanatory.nrows()),
        });
    }
    let centered_target = {
        let m = DMatrix::from_column_slice(target.len(), 1, target.as_slice());
        center_columns(&m).column(0).clone_owned()
    };
    if explanatory.ncols() == 0 {
        return Ok(Fit {
            coefficients: DVector::zeros(0),
            predictor: DVector::zeros(target.len()),
            residual: centered_target.clone(),
            target: centered_target,
        });
    }
    let e = center_columns(explanatory);
    // constant columns center to exact zeros and get a zero coefficient
    let active: Vec<usize> = (0..e.ncols())
        .filter(|&c| e.column(c).iter().any(|&v| v != 0.0))
        .collect();
    let mut coefficients = DVector::zeros(e.ncols());
    let mut predictor = DVector::zeros(target.len());
    if !active.is_empty() {
        let ea = e.select_columns(&active);
        let gram = ea.transpose() * &ea;
        let inv =
            invert_spd(&gram).map_err(|condition| Error::SingularExplanatory { condition })?;
        let beta = inv * (ea.transpose() * &centered_target);
        predictor = &ea * &beta;
        for (k, &c) in active.iter().enumerate() {
            coefficients[c] = beta[k];
        }
    }
    let residual = &centered_target - &predictor;
    Ok(Fit {
        coefficients,
        predictor,
        residual,
        target: centered_target,
    })
}

/// Denominator of the target log-ratio in [`residual_of_part`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualReference {
    /// A single controlled part.
    Part(usize),
    /// Geometric mean over all controlled parts.
    GeometricMean,
}

fn validate_target_and_control(target: usize, control: &[usize], n_parts: usize) -> Result<()> {
    validate_index_set(control, n_parts)?;
    if target >= n_parts {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: n_parts,
        });
    }
    if control.contains(&target) {
        return Err(Error::InvalidSubset(format!(
            "target part {target} is also a controlled part"
        )));
    }
    Ok(())
}

/// Residual of `log(X_target / ref)` after regression on the log-ratios
/// among the `control` parts, with the reference taken from those parts.
///
/// The result is the same for every admissible reference; a reference part
/// outside `control` is rejected with [`Error::InadmissibleReference`].
pub fn residual_of_part(
    x: &CompositionMatrix,
    target: usize,
    control: &[usize],
    reference: ResidualReference,
) -> Result<DVector<f64>> {
    validate_target_and_control(target, control, x.n_parts())?;
    let (target_ratio, explanatory) = match reference {
        ResidualReference::Part(k) => {
            if k >= x.n_parts() {
                return Err(Error::IndexOutOfRange {
                    index: k,
                    len: x.n_parts(),
                });
            }
            if !control.contains(&k) {
                return Err(Error::InadmissibleReference { reference: k });
            }
            let others: Vec<usize> = control.iter().copied().filter(|&i| i != k).collect();
            let t = subclr_transform(x, &[k], &[target])?;
            let e = explanatory_ratios(x, &[k], &others)?;
            (t, e)
        }
        ResidualReference::GeometricMean => {
            let t = subclr_transform(x, control, &[target])?;
            // the sub-clr columns sum to zero; one is dropped without
            // changing their span
            let e = explanatory_ratios(x, control, &control[..control.len() - 1])?;
            (t, e)
        }
    };
    let fit = fit_llsp(&target_ratio.values.column(0).clone_owned(), &explanatory)?;
    Ok(fit.residual)
}

fn explanatory_ratios(
    x: &CompositionMatrix,
    reference: &[usize],
    targets: &[usize],
) -> Result<DMatrix<f64>> {
    if targets.is_empty() {
        return Ok(DMatrix::zeros(x.n_samples(), 0));
    }
    Ok(subclr_transform(x, reference, targets)?.values)
}

/// Default agreement tolerance for [`residual_of_part_cross_checked`],
/// relative to the residual scale.
pub const CROSS_CHECK_TOLERANCE: f64 = 1e-10;

/// Computes the residual under every admissible reference (each controlled
/// part and the geometric mean) and fails if any two disagree by more than
/// `CROSS_CHECK_TOLERANCE * (1 + max |residual|)`. Returns the
/// geometric-mean version.
pub fn residual_of_part_cross_checked(
    x: &CompositionMatrix,
    target: usize,
    control: &[usize],
) -> Result<DVector<f64>> {
    let base = residual_of_part(x, target, control, ResidualReference::GeometricMean)?;
    let scale = 1.0 + base.amax();
    let mut worst = 0.0f64;
    for &k in control {
        let other = residual_of_part(x, target, control, ResidualReference::Part(k))?;
        worst = worst.max((&other - &base).amax());
    }
    if worst > CROSS_CHECK_TOLERANCE * scale {
        return Err(Error::ReferenceDisagreement {
            max_deviation: worst,
        });
    }
    Ok(base)
}

/// Partial correlation of parts `i` and `j` controlling for `control`,
/// computed as the correlation of two explicit residuals. The two targets
/// may use different admissible references.
pub fn residual_partial_correlation(
    x: &CompositionMatrix,
    (i, j): (usize, usize),
    control: &[usize],
    (ref_i, ref_j): (ResidualReference, ResidualReference),
) -> Result<f64> {
    let ri = residual_of_part(x, i, control, ref_i)?;
    let rj = residual_of_part(x, j, control, ref_j)?;
    Ok(correlation(&ri, &rj))
}

/// `1 / γ⁻_jj` for every part.
pub fn partial_variances(pinv: &ClrPseudoInverse) -> Result<DVector<f64>> {
    let diag = pinv.gamma_pinv.diagonal();
    for (index, &value) in diag.iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveDiagonal { index, value });
        }
    }
    Ok(diag.map(|v| 1.0 / v))
}

/// `-γ⁻_ij / sqrt(γ⁻_ii γ⁻_jj)` off the diagonal, 1 on it.
pub fn partial_correlations(pinv: &ClrPseudoInverse) -> Result<DMatrix<f64>> {
    partial_variances(pinv)?;
    Ok(rescale_to_partial_correlation(&pinv.gamma_pinv))
}

fn rescale_to_partial_correlation(inv: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = inv.nrows();
    let mut out = DMatrix::identity(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let r = -inv[(i, j)] / (inv[(i, i)] * inv[(j, j)]).sqrt();
            out[(i, j)] = r;
            out[(j, i)] = r;
        }
    }
    out
}

/// Which clr R² formula to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum R2Variant {
    /// `1 - 1 / (γ_jj γ⁻_jj)`.
    #[default]
    Uncorrected,
    /// `1 - ((D-1)/D)² / (γ_jj γ⁻_jj)`: the clr coordinate is
    /// `(D-1)/D` times the log-ratio against the geometric mean of the other
    /// parts, so its residual variance carries that factor squared.
    Corrected,
}

impl std::fmt::Display for R2Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            R2Variant::Uncorrected => "uncorrected",
            R2Variant::Corrected => "corrected",
        })
    }
}

impl std::str::FromStr for R2Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "uncorrected" | "paper" => Ok(R2Variant::Uncorrected),
            "corrected" => Ok(R2Variant::Corrected),
            other => Err(format!("unknown R² variant {other:?} (expected uncorrected or corrected)")),
        }
    }
}

/// `1 - 1 / (σ_jj σ⁻¹_jj)` for each alr coordinate (parts other than the
/// reference, in original order).
pub fn r_squared_alr(sigma: &AlrCovariance, sigma_inv: &DMatrix<f64>) -> Result<DVector<f64>> {
    let parts: Vec<usize> = (0..sigma.n_parts()).filter(|&i| i != sigma.ref_part).collect();
    let mut out = DVector::zeros(parts.len());
    for (k, &part) in parts.iter().enumerate() {
        let s = sigma.sigma[(k, k)];
        if !(s > 0.0) {
            return Err(Error::ZeroVariance { index: part });
        }
        out[k] = 1.0 - 1.0 / (s * sigma_inv[(k, k)]);
    }
    Ok(out)
}

/// R² of each clr coordinate on the others.
pub fn r_squared_clr(
    gamma: &ClrCovariance,
    pinv: &ClrPseudoInverse,
    variant: R2Variant,
) -> Result<DVector<f64>> {
    let dim = gamma.n_parts();
    let factor = match variant {
        R2Variant::Uncorrected => 1.0,
        R2Variant::Corrected => ((dim as f64 - 1.0) / dim as f64).powi(2),
    };
    let mut out = DVector::zeros(dim);
    for j in 0..dim {
        let g = gamma.gamma[(j, j)];
        if !(g > 0.0) {
            return Err(Error::ZeroVariance { index: j });
        }
        out[j] = 1.0 - factor / (g * pinv.gamma_pinv[(j, j)]);
    }
    Ok(out)
}

/// Covariance input for [`scaled_inverse_partial_corr`].
#[derive(Debug, Clone, Copy)]
pub enum CovarianceInput<'a> {
    Alr(&'a AlrCovariance),
    Clr(&'a ClrCovariance),
}

/// Partial correlations from the unit-diagonal (correlation) form of a
/// covariance.
///
/// * `Alr`: the correlation matrix of `Σ` is inverted and re-scaled; the
///   result covers the parts other than the reference, in original order.
/// * `Clr`: the correlation matrix `R = S Γ S` (`S = diag(1/sqrt(γ_jj))`) is
///   singular with null vector `S⁻¹ j`. Its generalized inverse
///   `(R + w wᵀ/D)⁻¹ - u uᵀ/D` with `w = S j`, `u = S⁻¹ j` is inverted and
///   re-scaled; the result covers all parts. The Moore–Penrose inverse of
///   `R` would not re-scale to the partial correlations, since its null
///   direction differs from that of `Γ⁻`.
pub fn scaled_inverse_partial_corr(input: CovarianceInput<'_>) -> Result<DMatrix<f64>> {
    match input {
        CovarianceInput::Alr(sigma) => {
            let scale = unit_diagonal_scale(&sigma.sigma, sigma.ref_part)?;
            let r = scale_both_sides(&sigma.sigma, &scale);
            let inv = invert_spd(&r).map_err(|condition| Error::SingularCovariance { condition })?;
            Ok(rescale_to_partial_correlation(&inv))
        }
        CovarianceInput::Clr(gamma) => {
            let dim = gamma.n_parts();
            let scale = unit_diagonal_scale(&gamma.gamma, usize::MAX)?;
            let r = scale_both_sides(&gamma.gamma, &scale);
            let w = scale.clone();
            let u = scale.map(|s| 1.0 / s);
            let d = dim as f64;
            let augmented = &r + &w * w.transpose() / d;
            let inv = invert_spd(&augmented)
                .map_err(|condition| Error::SingularCovariance { condition })?;
            let generalized = inv - &u * u.transpose() / d;
            Ok(rescale_to_partial_correlation(&generalized))
        }
    }
}

/// `1 / sqrt(diag)`; `skip` only shifts part numbers in error messages.
fn unit_diagonal_scale(m: &DMatrix<f64>, skip: usize) -> Result<DVector<f64>> {
    let mut scale = DVector::zeros(m.nrows());
    for k in 0..m.nrows() {
        let v = m[(k, k)];
        if !(v > 0.0) {
            let index = if k >= skip { k + 1 } else { k };
            return Err(Error::ZeroVariance { index });
        }
        scale[k] = 1.0 / v.sqrt();
    }
    Ok(scale)
}

fn scale_both_sides(m: &DMatrix<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| scale[i] * m[(i, j)] * scale[j])
}

/// Outcome of [`normalization_equivalence_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationReport {
    /// Partial correlation on `log(X / g(X_U))` treated as absolute data.
    pub opened: f64,
    /// Compositional partial correlation from the subcomposition of the
    /// pair and the controlled parts.
    pub compositional: f64,
    pub discrepancy: f64,
    /// Whether every normalizing part is among the controlled parts, or the
    /// normalizers are exactly the pair plus the controls (a clr); both
    /// numbers coincide in these cases.
    pub normalizers_controlled: bool,
}

/// Compares the partial correlation of the pair after normalizing by the
/// geometric mean of `normalizers` ("opening" the data) with the
/// compositional partial correlation, both controlling for `control`.
///
/// The opened value comes from the Moore–Penrose inverse of the covariance
/// of the normalized pair and controls (singular when the normalizers are
/// all controlled, since their normalized logs sum to zero).
pub fn normalization_equivalence_check(
    x: &CompositionMatrix,
    normalizers: &[usize],
    pair: (usize, usize),
    control: &[usize],
) -> Result<NormalizationReport> {
    let n_parts = x.n_parts();
    validate_index_set(normalizers, n_parts).map_err(|e| subset_error("normalizers", e))?;
    let mut variables = vec![pair.0, pair.1];
    variables.extend_from_slice(control);
    validate_index_set(&variables, n_parts).map_err(|e| subset_error("pair and controls", e))?;
    if control.is_empty() {
        return Err(Error::InvalidSubset("control set must not be empty".into()));
    }

    let normalized = subclr_transform(x, normalizers, &variables)?;
    let cov = covariance(&normalized.values, Divisor::Unbiased);
    let inv = pinv_symmetric(&cov, crate::covariance::EIGEN_ZERO_TOLERANCE)
        .ok_or_else(|| Error::DegenerateData("normalized data have zero covariance".into()))?;
    let opened = -inv[(0, 1)] / (inv[(0, 0)] * inv[(1, 1)]).sqrt();
    if !opened.is_finite() {
        return Err(Error::InvalidSubset(
            "a part of the pair is constant after normalization".into(),
        ));
    }

    let sub = x.subcomposition(&variables)?;
    let gamma = estimate_gamma(&sub, Divisor::Unbiased)?;
    let pinv = pseudo_inverse(&gamma, PseudoInverseOptions::default())?;
    let compositional = partial_correlations(&pinv)?[(0, 1)];

    Ok(NormalizationReport {
        opened,
        compositional,
        discrepancy: (opened - compositional).abs(),
        normalizers_controlled: normalizers.iter().all(|u| control.contains(u))
            || (normalizers.len() == variables.len()
                && variables.iter().all(|v| normalizers.contains(v))),
    })
}

fn subset_error(what: &str, e: Error) -> Error {
    Error::InvalidSubset(format!("{what}: {e}"))
}

/// Full-conditional residuals of every part: column `j` is
/// `(Z_c Γ⁻)_j / γ⁻_jj` with `Z_c` the centered clr data, which equals the
/// residual of `log(X_j / g(X_{-j}))` on the log-ratios among all other
/// parts.
///
/// The correlation of columns `i` and `j` is minus the partial correlation.
pub fn conditional_residuals(x: &CompositionMatrix, pinv: &ClrPseudoInverse) -> Result<DMatrix<f64>> {
    let diag = partial_variances(pinv)?;
    let z = center_columns(&crate::composition::clr(x).values);
    let mut e = z * &pinv.gamma_pinv;
    for (j, mut column) in e.column_iter_mut().enumerate() {
        column *= diag[j];
    }
    Ok(e)
}

/// Options for [`PartialAssociation::estimate`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AssociationOptions {
    pub divisor: Divisor,
    pub shrinkage: Option<f64>,
    /// Reference part for the alr R² column.
    pub alr_reference: Option<usize>,
}

/// Every single-part and pairwise quantity derived from `Γ⁻`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAssociation {
    pub gamma: ClrCovariance,
    pub pinv: ClrPseudoInverse,
    pub partial_variance: DVector<f64>,
    pub partial_corr: DMatrix<f64>,
    pub r2_clr: DVector<f64>,
    pub r2_clr_corrected: DVector<f64>,
    /// alr R² per part for `alr_reference`; `None` at the reference itself.
    pub r2_alr: Option<Vec<Option<f64>>>,
    pub alr_reference: Option<usize>,
    pub total_variance: f64,
}

impl PartialAssociation {
    pub fn estimate(x: &CompositionMatrix, options: AssociationOptions) -> Result<Self> {
        let gamma = estimate_gamma(x, options.divisor)?;
        Self::from_gamma(gamma, options)
    }

    pub fn from_gamma(gamma: ClrCovariance, options: AssociationOptions) -> Result<Self> {
        let pinv = pseudo_inverse(
            &gamma,
            PseudoInverseOptions {
                reference: None,
                shrinkage: options.shrinkage,
            },
        )?;
        let partial_variance = partial_variances(&pinv)?;
        let partial_corr = partial_correlations(&pinv)?;
        let r2_clr = r_squared_clr(&gamma, &pinv, R2Variant::Uncorrected)?;
        let r2_clr_corrected = r_squared_clr(&gamma, &pinv, R2Variant::Corrected)?;
        let r2_alr = match options.alr_reference {
            Some(reference) => {
                let sigma = sigma_from_gamma(&gamma, reference)?;
                let sigma = match options.shrinkage {
                    Some(lambda) => crate::covariance::shrink(&sigma, lambda)?,
                    None => sigma,
                };
                let r2 = r_squared_alr(&sigma, &sigma.inverse()?)?;
                let mut values = r2.iter().copied().map(Some).collect::<Vec<_>>();
                values.insert(reference, None);
                Some(values)
            }
            None => None,
        };
        let total_variance = gamma.total_variance();
        Ok(Self {
            gamma,
            pinv,
            partial_variance,
            partial_corr,
            r2_clr,
            r2_clr_corrected,
            r2_alr,
            alr_reference: options.alr_reference,
            total_variance,
        })
    }

    pub fn r2(&self, variant: R2Variant) -> &DVector<f64> {
        match variant {
            R2Variant::Uncorrected => &self.r2_clr,
            R2Variant::Corrected => &self.r2_clr_corrected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composition::close;
    use crate::structural::g_matrix;
    use approx::assert_abs_diff_eq;

    fn analytic(dim: usize, s2: f64) -> (ClrCovariance, ClrPseudoInverse) {
        let gamma = ClrCovariance::from_matrix(g_matrix(dim) * s2).unwrap();
        let pinv = pseudo_inverse(&gamma, Default::default()).unwrap();
        (gamma, pinv)
    }

    fn fixture() -> CompositionMatrix {
        let raw = DMatrix::from_row_slice(
            7,
            4,
            &[
                1.0, 2.0, 3.0, 4.0, //
                2.0, 1.0, 5.0, 1.5, //
                0.5, 0.7, 2.0, 3.0, //
                3.0, 2.5, 1.0, 0.8, //
                1.2, 4.0, 2.2, 1.1, //
                0.9, 1.9, 3.3, 2.7, //
                2.2, 0.4, 1.7, 0.6,
            ],
        );
        close(&raw).unwrap()
    }

    #[test]
    fn projection_covariance_gives_reciprocal_partial_correlations() {
        let (_, pinv) = analytic(3, 1.7);
        let pv = partial_variances(&pinv).unwrap();
        for v in pv.iter() {
            assert_abs_diff_eq!(*v, 1.5 * 1.7, epsilon = 1e-13);
        }
        for dim in [3, 4, 6] {
            let (_, pinv) = analytic(dim, 0.3);
            let pc = partial_correlations(&pinv).unwrap();
            for i in 0..dim {
                for j in 0..dim {
                    let expected = if i == j { 1.0 } else { 1.0 / (dim as f64 - 1.0) };
                    assert_abs_diff_eq!(pc[(i, j)], expected, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn r_squared_for_iid_logs() {
        // Σ = σ² H for D = 3: σ_jj σ⁻¹_jj = 2 · 2/3
        let (gamma, pinv) = analytic(3, 1.0);
        let sigma = sigma_from_gamma(&gamma, 2).unwrap();
        let r2 = r_squared_alr(&sigma, &sigma.inverse().unwrap()).unwrap();
        for v in r2.iter() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-14);
        }
        let corrected = r_squared_clr(&gamma, &pinv, R2Variant::Corrected).unwrap();
        for v in corrected.iter() {
            assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-14);
        }
        // the uncorrected formula is negative here: 1 - 1/(2/3)²
        let uncorrected = r_squared_clr(&gamma, &pinv, R2Variant::Uncorrected).unwrap();
        for v in uncorrected.iter() {
            assert_abs_diff_eq!(*v, 1.0 - 2.25, epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_variance_and_bad_diagonal() {
        let mut g = g_matrix(3);
        g.row_mut(0).fill(0.0);
        g.column_mut(0).fill(0.0);
        let gamma = ClrCovariance::from_matrix(g).unwrap();
        let pinv = ClrPseudoInverse {
            gamma_pinv: g_matrix(3),
            source: crate::covariance::PseudoInverseRoute::Eigen,
        };
        assert!(matches!(
            r_squared_clr(&gamma, &pinv, R2Variant::Uncorrected),
            Err(Error::ZeroVariance { index: 0 })
        ));
        let broken = ClrPseudoInverse {
            gamma_pinv: -g_matrix(3),
            source: crate::covariance::PseudoInverseRoute::Eigen,
        };
        assert!(matches!(
            partial_variances(&broken),
            Err(Error::NonPositiveDiagonal { index: 0, .. })
        ));
    }

    #[test]
    fn llsp_self_prediction_and_orthogonality() {
        let x = fixture();
        let e = subclr_transform(&x, &[3], &[1, 2]).unwrap();
        let target = e.values.column(0).clone_owned();
        let fit = llsp(&target, &e).unwrap();
        assert!(fit.residual_values.amax() < 1e-12);
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-12);

        let t = subclr_transform(&x, &[3], &[0]).unwrap().values.column(0).clone_owned();
        let fit = llsp(&t, &e).unwrap();
        let n = x.n_samples() as f64;
        let centered = center_columns(&e.values);
        for column in centered.column_iter() {
            assert!(fit.residual_values.dot(&column).abs() / n < 1e-10);
        }
        let sum = &fit.predictor_values + &fit.residual_values;
        assert!((sum - &fit.target_values).amax() < 1e-14);
    }

    #[test]
    fn llsp_uncorrelated_explanatory_gives_zero_predictor() {
        // target and explanatory are orthogonal after centering
        let values = DMatrix::from_column_slice(4, 1, &[1.0, -1.0, 1.0, -1.0]);
        let e = LogRatioMatrix {
            values,
            reference: ReferenceSpec::Alr { part: 1 },
            part_labels: vec!["a".into()],
            source_labels: vec!["a".into(), "b".into()],
        };
        let target = DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0]);
        let fit = llsp(&target, &e).unwrap();
        assert!(fit.predictor_values.amax() < 1e-15);
    }

    #[test]
    fn llsp_singular_explanatory() {
        let values = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 0.0, 0.0]);
        let e = LogRatioMatrix {
            values,
            reference: ReferenceSpec::Alr { part: 2 },
            part_labels: vec!["a".into(), "b".into()],
            source_labels: vec!["a".into(), "b".into(), "c".into()],
        };
        let target = DVector::from_vec(vec![1.0, 0.0, 2.0, 1.0]);
        assert!(matches!(
            llsp(&target, &e),
            Err(Error::SingularExplanatory { .. })
        ));
    }

    #[test]
    fn residuals_agree_across_references() {
        let x = fixture();
        let gm = residual_of_part(&x, 0, &[2, 3], ResidualReference::GeometricMean).unwrap();
        for k in [2, 3] {
            let r = residual_of_part(&x, 0, &[2, 3], ResidualReference::Part(k)).unwrap();
            assert!((&r - &gm).amax() < 1e-12);
        }
        residual_of_part_cross_checked(&x, 1, &[0, 2, 3]).unwrap();
    }

    #[test]
    fn inadmissible_reference_is_rejected() {
        let x = fixture();
        assert!(matches!(
            residual_of_part(&x, 0, &[2], ResidualReference::Part(3)),
            Err(Error::InadmissibleReference { reference: 3 })
        ));
        assert!(matches!(
            residual_of_part(&x, 0, &[0, 2], ResidualReference::GeometricMean),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn equal_parts_give_zero_residuals() {
        let raw = DMatrix::from_fn(5, 4, |r, _| (r + 1) as f64);
        let x = close(&raw).unwrap();
        let r = residual_of_part(&x, 0, &[1, 2, 3], ResidualReference::GeometricMean).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shortcut_matches_residuals_on_fixture() {
        let x = fixture();
        let assoc = PartialAssociation::estimate(&x, Default::default()).unwrap();
        for j in 0..4 {
            let control: Vec<usize> = (0..4).filter(|&k| k != j).collect();
            let r = residual_of_part(&x, j, &control, ResidualReference::GeometricMean).unwrap();
            let v = crate::linalg::variance(&r, Divisor::Unbiased);
            assert_abs_diff_eq!(v, assoc.partial_variance[j], epsilon = 1e-10);
        }
        let r = residual_partial_correlation(
            &x,
            (0, 1),
            &[2, 3],
            (ResidualReference::Part(2), ResidualReference::Part(3)),
        )
        .unwrap();
        assert_abs_diff_eq!(r, assoc.partial_corr[(0, 1)], epsilon = 1e-10);
    }

    #[test]
    fn conditional_residuals_recover_partial_correlations() {
        let x = fixture();
        let assoc = PartialAssociation::estimate(&x, Default::default()).unwrap();
        let e = conditional_residuals(&x, &assoc.pinv).unwrap();
        let c = correlation(&e.column(0).clone_owned(), &e.column(2).clone_owned());
        assert_abs_diff_eq!(-c, assoc.partial_corr[(0, 2)], epsilon = 1e-10);
    }

    #[test]
    fn scaled_routes_match() {
        let x = fixture();
        let assoc = PartialAssociation::estimate(&x, Default::default()).unwrap();
        let clr_route = scaled_inverse_partial_corr(CovarianceInput::Clr(&assoc.gamma)).unwrap();
        assert!((&clr_route - &assoc.partial_corr).amax() < 1e-10);
        let sigma = sigma_from_gamma(&assoc.gamma, 1).unwrap();
        let alr_route = scaled_inverse_partial_corr(CovarianceInput::Alr(&sigma)).unwrap();
        let keep = [0, 2, 3];
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                assert_abs_diff_eq!(alr_route[(a, b)], assoc.partial_corr[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn scaled_route_is_scale_free() {
        for s2 in [0.01, 1.0, 40.0] {
            let (gamma, _) = analytic(5, s2);
            let pc = scaled_inverse_partial_corr(CovarianceInput::Clr(&gamma)).unwrap();
            assert_abs_diff_eq!(pc[(0, 3)], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn normalization_check_rejects_overlaps() {
        let x = fixture();
        assert!(matches!(
            normalization_equivalence_check(&x, &[3], (0, 1), &[1, 2]),
            Err(Error::InvalidSubset(_))
        ));
        assert!(matches!(
            normalization_equivalence_check(&x, &[], (0, 1), &[2, 3]),
            Err(Error::InvalidSubset(_))
        ));
        let ok = normalization_equivalence_check(&x, &[3], (0, 1), &[2, 3]).unwrap();
        assert!(ok.normalizers_controlled);
        assert!(ok.discrepancy < 1e-10);
        let clr = normalization_equivalence_check(&x, &[0, 1, 2, 3], (0, 1), &[2, 3]).unwrap();
        assert!(clr.normalizers_controlled);
        assert!(clr.discrepancy < 1e-10);
        assert!(matches!(
            normalization_equivalence_check(&x, &[0], (0, 1), &[2, 3]),
            Err(Error::InvalidSubset(_))
        ));
    }

    #[test]
    fn alr_r2_column_skips_reference() {
        let x = fixture();
        let assoc = PartialAssociation::estimate(
            &x,
            AssociationOptions {
                alr_reference: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        let r2 = assoc.r2_alr.unwrap();
        assert_eq!(r2.len(), 4);
        assert!(r2[1].is_none());
        assert!(r2.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn r2_variant_parsing() {
        assert_eq!("uncorrected".parse::<R2Variant>().unwrap(), R2Variant::Uncorrected);
        assert_eq!("paper".parse::<R2Variant>().unwrap(), R2Variant::Uncorrected);
        assert_eq!("corrected".parse::<R2Variant>().unwrap(), R2Variant::Corrected);
        assert!("other".parse::<R2Variant>().is_err());
    }
}
