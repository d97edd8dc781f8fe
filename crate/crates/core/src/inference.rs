//! Permutation-based plug-in FDR estimates and q-values for partial
//! correlations.
//!
//! Each replicate permutes the samples within every part independently,
//! re-closes the rows and recomputes all partial correlations. For a cutoff
//! `C` on the grid `{step, 2 step, ..., 1}` the positive-tail estimate is
//!
//! ```text
//! FDR(C) = mean over replicates of #{pairs: r_rand ≥ C} / #{pairs: r_obs ≥ C}
//! ```
//!
//! and the negative tail uses `≤ -C`. The q-value of an observed `r` is the
//! smallest `FDR(C)` over grid cutoffs `C ≤ |r|` on the tail of its sign.
//! Cutoffs without observed exceedances are undefined and skipped.
//!
//! Replicate `b` draws from `ChaCha8Rng::seed_from_u64(seed)` with stream
//! `b`, so results do not depend on thread count or scheduling.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::composition::{close, CompositionMatrix};
use crate::covariance::{estimate_gamma, pseudo_inverse, PseudoInverseOptions};
use crate::error::{Error, Result};
use crate::linalg::{correlation, Divisor};
use crate::partial::{conditional_residuals, partial_correlations};

/// Name of the random number generator, as reported in output metadata.
pub const RNG_NAME: &str = "ChaCha8Rng(seed_from_u64(seed), stream = replicate index)";

/// Share of failed replicates above which a warning is attached.
pub const FAILED_REPLICATE_WARNING: f64 = 0.01;

/// What a replicate shuffles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PermuteMode {
    /// Shuffle the samples within each part of the data.
    #[default]
    Columns,
    /// Shuffle the full-conditional residuals of each part of the observed
    /// data and correlate them; a less severe test.
    Residuals,
}

impl std::fmt::Display for PermuteMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PermuteMode::Columns => "columns",
            PermuteMode::Residuals => "residuals",
        })
    }
}

impl std::str::FromStr for PermuteMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "columns" => Ok(PermuteMode::Columns),
            "residuals" => Ok(PermuteMode::Residuals),
            other => Err(format!("unknown permute mode {other:?} (expected columns or residuals)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermutationConfig {
    pub n_randomizations: usize,
    pub cutoff_step: f64,
    pub seed: u64,
    pub mode: PermuteMode,
    pub shrinkage: Option<f64>,
    pub divisor: Divisor,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            n_randomizations: 10_000,
            cutoff_step: 0.001,
            seed: 0,
            mode: PermuteMode::Columns,
            shrinkage: None,
            divisor: Divisor::Unbiased,
        }
    }
}

impl PermutationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_randomizations < 1 {
            return Err(Error::InvalidConfig(
                "number of randomizations must be at least 1".into(),
            ));
        }
        if !(self.cutoff_step > 0.0 && self.cutoff_step <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cutoff step {} outside (0, 1]",
                self.cutoff_step
            )));
        }
        if let Some(lambda) = self.shrinkage {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::LambdaOutOfRange(lambda));
            }
        }
        Ok(())
    }
}

/// Shuffles the samples of every part independently and re-closes.
pub fn permute_dataset(x: &CompositionMatrix, rng: &mut ChaCha8Rng) -> CompositionMatrix {
    let n = x.n_samples();
    let orders: Vec<Vec<usize>> = (0..x.n_parts())
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
        })
        .collect();
    permute_columns(x, &orders).expect("shuffled orders are valid")
}

/// Applies an explicit row order to each part (`orders[j][r]` is the
/// source row of output row `r` in part `j`) and re-closes.
pub fn permute_columns(x: &CompositionMatrix, orders: &[Vec<usize>]) -> Result<CompositionMatrix> {
    let (n, d) = (x.n_samples(), x.n_parts());
    if orders.len() != d {
        return Err(Error::DimensionMismatch {
            expected: format!("{d} row orders"),
            found: format!("{} row orders", orders.len()),
        });
    }
    for order in orders {
        crate::structural::Permutation::new(order.clone())?;
        if order.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("row orders of length {n}"),
                found: format!("length {}", order.len()),
            });
        }
    }
    let values = x.values();
    let permuted = DMatrix::from_fn(n, d, |r, c| values[(orders[c][r], c)]);
    close(&permuted)?.with_names(x.names().to_vec())
}

/// Exceedance counts per grid cutoff. Index `k - 1` holds cutoff `k · step`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExceedanceCounts {
    pub observed_positive: Vec<u64>,
    pub observed_negative: Vec<u64>,
    /// Summed over all successful replicates.
    pub randomized_positive: Vec<u64>,
    pub randomized_negative: Vec<u64>,
    pub replicates: u64,
}

/// Number of grid cutoffs for `step`.
pub fn n_cutoffs(step: f64) -> usize {
    let mut k = (1.0 / step).floor() as usize;
    while cutoff(k + 1, step) <= 1.0 {
        k += 1;
    }
    while k > 0 && cutoff(k, step) > 1.0 {
        k -= 1;
    }
    k
}

/// Grid cutoff `k · step`; every comparison uses this one expression.
pub fn cutoff(k: usize, step: f64) -> f64 {
    k as f64 * step
}

/// Number of grid cutoffs `C` with `C ≤ value`.
pub fn cutoff_index(value: f64, step: f64, n_cutoffs: usize) -> usize {
    if !(value >= step) {
        return 0;
    }
    let mut k = ((value / step).floor() as usize).min(n_cutoffs);
    while k < n_cutoffs && cutoff(k + 1, step) <= value {
        k += 1;
    }
    while k > 0 && cutoff(k, step) > value {
        k -= 1;
    }
    k
}

impl ExceedanceCounts {
    pub fn new(n_cutoffs: usize) -> Self {
        Self {
            observed_positive: vec![0; n_cutoffs],
            observed_negative: vec![0; n_cutoffs],
            randomized_positive: vec![0; n_cutoffs],
            randomized_negative: vec![0; n_cutoffs],
            replicates: 0,
        }
    }

    fn tally(values: &[f64], step: f64, positive: &mut [u64], negative: &mut [u64]) {
        let k_max = positive.len();
        for &r in values {
            for slot in positive.iter_mut().take(cutoff_index(r, step, k_max)) {
                *slot += 1;
            }
            for slot in negative.iter_mut().take(cutoff_index(-r, step, k_max)) {
                *slot += 1;
            }
        }
    }

    pub fn add_observed(&mut self, values: &[f64], step: f64) {
        Self::tally(
            values,
            step,
            &mut self.observed_positive,
            &mut self.observed_negative,
        );
    }

    pub fn add_replicate(&mut self, values: &[f64], step: f64) {
        Self::tally(
            values,
            step,
            &mut self.randomized_positive,
            &mut self.randomized_negative,
        );
        self.replicates += 1;
    }

    /// Adds the randomized counts of `other`.
    pub fn merge_randomized(mut self, other: &Self) -> Self {
        for (a, b) in self.randomized_positive.iter_mut().zip(&other.randomized_positive) {
            *a += b;
        }
        for (a, b) in self.randomized_negative.iter_mut().zip(&other.randomized_negative) {
            *a += b;
        }
        self.replicates += other.replicates;
        self
    }
}

/// Plug-in FDR per grid cutoff and tail; `None` where no observed pair
/// reaches the cutoff.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdrCurves {
    pub step: f64,
    pub positive: Vec<Option<f64>>,
    pub negative: Vec<Option<f64>>,
    pub counts: ExceedanceCounts,
}

impl FdrCurves {
    pub fn from_counts(counts: ExceedanceCounts, step: f64) -> Self {
        let b = counts.replicates as f64;
        let curve = |randomized: &[u64], observed: &[u64]| -> Vec<Option<f64>> {
            randomized
                .iter()
                .zip(observed)
                .map(|(&ra, &ob)| (ob > 0 && b > 0.0).then(|| (ra as f64 / b) / ob as f64))
                .collect()
        };
        Self {
            step,
            positive: curve(&counts.randomized_positive, &counts.observed_positive),
            negative: curve(&counts.randomized_negative, &counts.observed_negative),
            counts,
        }
    }

    pub fn n_cutoffs(&self) -> usize {
        self.positive.len()
    }
}

/// Builds the FDR curves from observed pair statistics and randomized
/// replicates of the same pairs.
pub fn fdr_curve(observed: &[f64], randomized: &[Vec<f64>], step: f64) -> FdrCurves {
    let k = n_cutoffs(step);
    let mut counts = ExceedanceCounts::new(k);
    counts.add_observed(observed, step);
    for replicate in randomized {
        counts.add_replicate(replicate, step);
    }
    FdrCurves::from_counts(counts, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tail {
    Positive,
    Negative,
}

/// q-value of one observed statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QValue {
    pub tail: Tail,
    /// Minimum FDR over the admissible cutoffs; may exceed 1.
    pub raw: f64,
    /// `raw` capped at 1.
    pub q: f64,
    /// Randomized exceedances, summed over replicates, at the largest grid
    /// cutoff not above `|r|`; zero when `|r|` is below the first cutoff.
    pub randomized_exceedances: u64,
}

/// q-value of `r` from the curves; 1 when `|r|` is below the first cutoff.
pub fn q_value(curves: &FdrCurves, r: f64) -> QValue {
    let (tail, magnitude, curve, counts) = if r >= 0.0 {
        (Tail::Positive, r, &curves.positive, &curves.counts.randomized_positive)
    } else {
        (Tail::Negative, -r, &curves.negative, &curves.counts.randomized_negative)
    };
    let k = cutoff_index(magnitude, curves.step, curves.n_cutoffs());
    let raw = curve[..k]
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let raw = if raw.is_finite() { raw } else { 1.0 };
    QValue {
        tail,
        raw,
        q: raw.min(1.0),
        randomized_exceedances: if k > 0 { counts[k - 1] } else { 0 },
    }
}

/// One unordered pair of parts with its statistic and q-value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub i: usize,
    pub j: usize,
    pub r: f64,
    #[serde(flatten)]
    pub q: QValue,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QValueTable {
    pub n_parts: usize,
    /// Pairs `(i, j)` with `i < j` in row-major order.
    pub pairs: Vec<PairResult>,
    pub curves: FdrCurves,
    pub requested_replicates: usize,
    /// Replicates that failed, with their error messages.
    pub failed_replicates: Vec<(usize, String)>,
    pub warning: Option<String>,
}

/// Builds the q-value table from the observed partial-correlation matrix
/// and the curves.
pub fn q_values(curves: FdrCurves, observed: &DMatrix<f64>) -> QValueTable {
    let d = observed.nrows();
    let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let r = observed[(i, j)];
            pairs.push(PairResult {
                i,
                j,
                r,
                q: q_value(&curves, r),
            });
        }
    }
    QValueTable {
        n_parts: d,
        pairs,
        requested_replicates: curves.counts.replicates as usize,
        curves,
        failed_replicates: Vec::new(),
        warning: None,
    }
}

impl QValueTable {
    pub fn pair(&self, i: usize, j: usize) -> Option<&PairResult> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    /// Capped q-values as a symmetric matrix with `None` on the diagonal.
    pub fn q_matrix(&self) -> Vec<Vec<Option<f64>>> {
        let mut m = vec![vec![None; self.n_parts]; self.n_parts];
        for p in &self.pairs {
            m[p.i][p.j] = Some(p.q.q);
            m[p.j][p.i] = Some(p.q.q);
        }
        m
    }

    pub fn successful_replicates(&self) -> u64 {
        self.curves.counts.replicates
    }
}

fn upper_triangle(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn partial_corr_of(x: &CompositionMatrix, config: &PermutationConfig) -> Result<DMatrix<f64>> {
    let gamma = estimate_gamma(x, config.divisor)?;
    let pinv = pseudo_inverse(
        &gamma,
        PseudoInverseOptions {
            reference: None,
            shrinkage: config.shrinkage,
        },
    )?;
    partial_correlations(&pinv)
}

/// Runs the full permutation procedure with the mode from `config`.
pub fn run_inference(x: &CompositionMatrix, config: &PermutationConfig) -> Result<QValueTable> {
    match config.mode {
        PermuteMode::Columns => run_inference_with(x, config, permute_dataset),
        PermuteMode::Residuals => run_residual_inference(x, config),
    }
}

/// Column-permutation inference with a caller-supplied shuffle, which
/// receives the replicate's generator.
pub fn run_inference_with<S>(
    x: &CompositionMatrix,
    config: &PermutationConfig,
    shuffle: S,
) -> Result<QValueTable>
where
    S: Fn(&CompositionMatrix, &mut ChaCha8Rng) -> CompositionMatrix + Sync,
{
    config.validate()?;
    let observed = partial_corr_of(x, config)?;
    run_replicates(&observed, config, |rng| {
        let permuted = shuffle(x, rng);
        partial_corr_of(&permuted, config).map(|m| upper_triangle(&m))
    })
}

fn run_residual_inference(x: &CompositionMatrix, config: &PermutationConfig) -> Result<QValueTable> {
    config.validate()?;
    let gamma = estimate_gamma(x, config.divisor)?;
    let pinv = pseudo_inverse(
        &gamma,
        PseudoInverseOptions {
            reference: None,
            shrinkage: config.shrinkage,
        },
    )?;
    let observed = partial_correlations(&pinv)?;
    let residuals = conditional_residuals(x, &pinv)?;
    let (n, d) = residuals.shape();
    run_replicates(&observed, config, |rng| {
        let columns: Vec<DVector<f64>> = (0..d)
            .map(|c| {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(rng);
                DVector::from_iterator(n, order.iter().map(|&r| residuals[(r, c)]))
            })
            .collect();
        let mut out = Vec::with_capacity(d * (d - 1) / 2);
        for i in 0..d {
            for j in (i + 1)..d {
                // residual correlations carry the opposite sign
                out.push(-correlation(&columns[i], &columns[j]));
            }
        }
        Ok(out)
    })
}

struct Accumulator {
    counts: ExceedanceCounts,
    failed: Vec<(usize, String)>,
}

fn run_replicates<R>(
    observed: &DMatrix<f64>,
    config: &PermutationConfig,
    replicate: R,
) -> Result<QValueTable>
where
    R: Fn(&mut ChaCha8Rng) -> Result<Vec<f64>> + Sync,
{
    let step = config.cutoff_step;
    let k = n_cutoffs(step);
    let empty = || Accumulator {
        counts: ExceedanceCounts::new(k),
        failed: Vec::new(),
    };
    let acc = (0..config.n_randomizations)
        .into_par_iter()
        .fold(empty, |mut acc, b| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(b as u64);
            match replicate(&mut rng) {
                Ok(values) => acc.counts.add_replicate(&values, step),
                Err(e) => acc.failed.push((b, e.to_string())),
            }
            acc
        })
        .reduce(empty, |mut a, b| {
            a.counts = a.counts.merge_randomized(&b.counts);
            a.failed.extend(b.failed);
            a
        });

    let mut counts = acc.counts;
    counts.add_observed(&upper_triangle(observed), step);
    if counts.replicates == 0 {
        return Err(Error::DegenerateData(format!(
            "all {} randomizations failed; first error: {}",
            config.n_randomizations,
            acc.failed.first().map(|f| f.1.as_str()).unwrap_or("none")
        )));
    }
    let mut failed = acc.failed;
    failed.sort_by_key(|f| f.0);
    let share = failed.len() as f64 / config.n_randomizations as f64;
    let warning = (share > FAILED_REPLICATE_WARNING).then(|| {
        format!(
            "{} of {} randomizations failed and were excluded",
            failed.len(),
            config.n_randomizations
        )
    });
    let mut table = q_values(FdrCurves::from_counts(counts, step), observed);
    table.requested_replicates = config.n_randomizations;
    table.failed_replicates = failed;
    table.warning = warning;
    Ok(table)
}
