//! Numerical self-check: runs the library's identities on seeded synthetic
//! data and reports the largest deviation of each.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::composition::{close, CompositionMatrix};
use crate::covariance::{
    estimate_gamma, estimate_sigma, pseudo_inverse, pseudo_inverse_eigen, sigma_from_gamma,
    variation_matrix, ClrCovariance, PseudoInverseOptions, VariationMatrix,
};
use crate::error::Result;
use crate::inference::fdr_curve;
use crate::linalg::{correlation, max_abs_diff, variance, Divisor};
use crate::partial::{
    normalization_equivalence_check, partial_correlations, partial_variances, residual_of_part,
    scaled_inverse_partial_corr, CovarianceInput, ResidualReference,
};
use crate::structural::{f_matrix, g_matrix, h_inverse, h_matrix, Permutation};
use crate::synthetic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfCheckConfig {
    pub n_samples: usize,
    pub n_parts: usize,
    pub seed: u64,
    /// Adds an asymmetric perturbation to `Γ` so that the symmetry check
    /// must fail.
    pub corrupt_gamma: bool,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            n_parts: 5,
            seed: 1,
            corrupt_gamma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub config: SelfCheckConfig,
    pub checks: Vec<Check>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render_text(&self) -> String {
        let mut out = format!(
            "selfcheck: N = {}, D = {}, seed = {}{}\n",
            self.config.n_samples,
            self.config.n_parts,
            self.config.seed,
            if self.config.corrupt_gamma { " (corrupted Γ)" } else { "" }
        );
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<36} max deviation {:.3e} (tolerance {:.0e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_deviation,
                c.tolerance
            ));
        }
        out
    }
}

struct Checks(Vec<Check>);

impl Checks {
    fn record(&mut self, name: &'static str, max_deviation: f64, tolerance: f64) {
        self.0.push(Check {
            name,
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        });
    }

    /// Records a check whose computation failed as an infinite deviation.
    fn record_result(&mut self, name: &'static str, value: Result<f64>, tolerance: f64) {
        self.record(name, value.unwrap_or(f64::INFINITY), tolerance);
    }
}

/// Runs every check. Computation errors count as failures, never as
/// panics.
pub fn run_selfcheck(config: SelfCheckConfig) -> Result<SelfCheckReport> {
    let x = synthetic::lognormal(config.n_samples, config.n_parts, config.seed)?;
    let d = x.n_parts();
    let mut gamma = estimate_gamma(&x, Divisor::Unbiased)?;
    if config.corrupt_gamma {
        gamma.gamma[(0, 1)] += 1e-3;
    }
    let mut checks = Checks(Vec::new());

    checks.record(
        "structural identities",
        structural_deviation(d),
        1e-12,
    );
    checks.record(
        "clr covariance symmetric",
        max_abs_diff(&gamma.gamma, &gamma.gamma.transpose()),
        1e-12,
    );
    checks.record(
        "clr covariance rows sum to zero",
        gamma.gamma.column_sum().amax(),
        1e-10,
    );
    checks.record_result(
        "alr covariance equals F Γ Fᵀ",
        estimate_sigma(&x, d - 1, Divisor::Unbiased).and_then(|direct| {
            let image = sigma_from_gamma(&gamma, d - 1)?;
            Ok(max_abs_diff(&direct.sigma, &image.sigma))
        }),
        1e-12,
    );
    checks.record_result("variation matrix from Γ", variation_deviation(&x, &gamma), 1e-10);
    checks.record_result("pseudoinverse reference-free", reference_deviation(&gamma), 1e-9);
    checks.record_result("pseudoinverse equals eigen route", eigen_deviation(&gamma), 1e-8);
    checks.record_result("Γ Γ⁻ Γ = Γ", penrose_deviation(&gamma), 1e-9);
    checks.record_result(
        "permutation equivariance",
        permutation_deviation(&x, config.seed),
        1e-9,
    );
    checks.record_result("residual reference independence", residual_reference_deviation(&x), 1e-10);
    checks.record_result("partial correlation oracle", oracle_deviation(&x, &gamma), 1e-8);
    checks.record_result("partial variance oracle", variance_oracle_deviation(&x, &gamma), 1e-8);
    checks.record_result(
        "scaled inverse matches",
        scaled_route_deviation(&gamma),
        1e-10,
    );
    checks.record_result("normalization equivalence", normalization_deviation(&x), 1e-10);
    checks.record_result("scale invariance", scale_deviation(&x, config.seed), 1e-12);
    checks.record("plug-in FDR hand fixture", fdr_fixture_deviation(), 0.0);

    Ok(SelfCheckReport {
        config,
        checks: checks.0,
    })
}

fn structural_deviation(d: usize) -> f64 {
    let f = f_matrix(d);
    let g = g_matrix(d);
    let hinv = h_inverse(d);
    [
        max_abs_diff(&(&f * f.transpose()), &h_matrix(d)),
        max_abs_diff(&(h_matrix(d) * &hinv), &DMatrix::identity(d - 1, d - 1)),
        max_abs_diff(&(f.transpose() * &hinv * &f), &g),
        max_abs_diff(&(&g * &g), &g),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn variation_deviation(x: &CompositionMatrix, gamma: &ClrCovariance) -> Result<f64> {
    let direct = variation_matrix(x, Divisor::Unbiased)?;
    Ok(max_abs_diff(&direct.tau, &VariationMatrix::from_gamma(gamma).tau))
}

fn reference_deviation(gamma: &ClrCovariance) -> Result<f64> {
    let base = pseudo_inverse(gamma, PseudoInverseOptions::default())?;
    let mut worst = 0.0f64;
    for reference in 0..gamma.n_parts() {
        let other = pseudo_inverse(
            gamma,
            PseudoInverseOptions {
                reference: Some(reference),
                shrinkage: None,
            },
        )?;
        worst = worst.max(max_abs_diff(&other.gamma_pinv, &base.gamma_pinv));
    }
    Ok(worst)
}

fn eigen_deviation(gamma: &ClrCovariance) -> Result<f64> {
    let alr = pseudo_inverse(gamma, PseudoInverseOptions::default())?;
    let eig = pseudo_inverse_eigen(gamma)?;
    Ok(max_abs_diff(&alr.gamma_pinv, &eig.gamma_pinv))
}

fn penrose_deviation(gamma: &ClrCovariance) -> Result<f64> {
    let pinv = pseudo_inverse(gamma, PseudoInverseOptions::default())?;
    let g = &gamma.gamma;
    Ok(max_abs_diff(&(g * &pinv.gamma_pinv * g), g))
}

fn permutation_deviation(x: &CompositionMatrix, seed: u64) -> Result<f64> {
    let d = x.n_parts();
    let base = pseudo_inverse(&estimate_gamma(x, Divisor::Unbiased)?, Default::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut rng);
        let perm = Permutation::new(order)?;
        let p = perm.to_matrix();
        let permuted = x.permute_parts(&perm)?;
        let recomputed =
            pseudo_inverse(&estimate_gamma(&permuted, Divisor::Unbiased)?, Default::default())?;
        let conjugated = &p * &base.gamma_pinv * p.transpose();
        worst = worst.max(max_abs_diff(&recomputed.gamma_pinv, &conjugated));
    }
    Ok(worst)
}

fn residual_reference_deviation(x: &CompositionMatrix) -> Result<f64> {
    let d = x.n_parts();
    let control: Vec<usize> = (2..d).collect();
    let base = residual_of_part(x, 0, &control, ResidualReference::GeometricMean)?;
    let mut worst = 0.0f64;
    for &k in &control {
        let other = residual_of_part(x, 0, &control, ResidualReference::Part(k))?;
        worst = worst.max((&other - &base).amax());
    }
    Ok(worst)
}

fn oracle_deviation(x: &CompositionMatrix, gamma: &ClrCovariance) -> Result<f64> {
    let pc = partial_correlations(&pseudo_inverse(gamma, Default::default())?)?;
    let d = x.n_parts();
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in (i + 1)..d {
            let control: Vec<usize> = (0..d).filter(|&k| k != i && k != j).collect();
            let ri = residual_of_part(x, i, &control, ResidualReference::GeometricMean)?;
            let rj = residual_of_part(x, j, &control, ResidualReference::GeometricMean)?;
            worst = worst.max((correlation(&ri, &rj) - pc[(i, j)]).abs());
        }
    }
    Ok(worst)
}

fn variance_oracle_deviation(x: &CompositionMatrix, gamma: &ClrCovariance) -> Result<f64> {
    let pv = partial_variances(&pseudo_inverse(gamma, Default::default())?)?;
    let d = x.n_parts();
    let mut worst = 0.0f64;
    for j in 0..d {
        let control: Vec<usize> = (0..d).filter(|&k| k != j).collect();
        let r = residual_of_part(x, j, &control, ResidualReference::GeometricMean)?;
        let v = variance(&r, gamma.divisor.unwrap_or_default());
        worst = worst.max((v - pv[j]).abs() / pv[j].max(1.0));
    }
    Ok(worst)
}

fn scaled_route_deviation(gamma: &ClrCovariance) -> Result<f64> {
    let pc = partial_correlations(&pseudo_inverse(gamma, Default::default())?)?;
    let scaled = scaled_inverse_partial_corr(CovarianceInput::Clr(gamma))?;
    Ok(max_abs_diff(&pc, &scaled))
}

fn normalization_deviation(x: &CompositionMatrix) -> Result<f64> {
    let d = x.n_parts();
    let normalizers = [d - 2, d - 1];
    let control: Vec<usize> = (2..d).collect();
    Ok(normalization_equivalence_check(x, &normalizers, (0, 1), &control)?.discrepancy)
}

fn scale_deviation(x: &CompositionMatrix, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1e);
    let mut scaled = x.values().clone();
    for mut row in scaled.row_iter_mut() {
        row *= rng.random_range(0.01..100.0);
    }
    // closing the rescaled rows again must not move any statistic
    let y = close(&scaled)?;
    let a = partial_correlations(&pseudo_inverse(&estimate_gamma(x, Divisor::Unbiased)?, Default::default())?)?;
    let b = partial_correlations(&pseudo_inverse(&estimate_gamma(&y, Divisor::Unbiased)?, Default::default())?)?;
    Ok(max_abs_diff(&a, &b))
}

fn fdr_fixture_deviation() -> f64 {
    let curves = fdr_curve(
        &[0.5, 0.8, -0.6],
        &[vec![0.5, 0.2, -0.5], vec![0.9, 1.0, -0.1]],
        0.5,
    );
    let expected = [Some(0.75), None, Some(0.5), None];
    curves
        .positive
        .iter()
        .chain(&curves.negative)
        .zip(expected)
        .map(|(got, want)| match (got, want) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}
