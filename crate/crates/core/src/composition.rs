//! Compositions, closure and log-ratio transforms.
//!
//! All logarithms are natural logarithms. Part indices are zero-based.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::structural::{f_matrix, h_inverse, Permutation};

/// An `N x D` table of strictly positive proportions whose rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionMatrix {
    values: DMatrix<f64>,
    names: Vec<String>,
}

/// Divides every row of `raw` by its sum.
///
/// Every entry must be strictly positive; zeros are rejected rather than
/// imputed.
pub fn close(raw: &DMatrix<f64>) -> Result<CompositionMatrix> {
    let (n, d) = raw.shape();
    if d < 2 {
        return Err(Error::DimensionTooSmall {
            what: "number of parts",
            found: d,
            min: 2,
        });
    }
    if n < 2 {
        return Err(Error::DimensionTooSmall {
            what: "number of samples",
            found: n,
            min: 2,
        });
    }
    for row in 0..n {
        for column in 0..d {
            let value = raw[(row, column)];
            // `!(x > 0)` also catches NaN
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::NonPositiveEntry { row, column, value });
            }
        }
    }
    let mut values = raw.clone();
    for mut row in values.row_iter_mut() {
        let total: f64 = row.iter().sum();
        row /= total;
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Ok(CompositionMatrix { values, names })
}

impl CompositionMatrix {
    /// Replaces the default labels `x1..xD`.
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_parts() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} labels", self.n_parts()),
                found: format!("{} labels", names.len()),
            });
        }
        self.names = names;
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_parts(&self) -> usize {
        self.values.ncols()
    }

    /// Natural logarithm of every entry.
    pub fn log_values(&self) -> DMatrix<f64> {
        self.values.map(f64::ln)
    }

    /// Returns the composition with its parts reordered: new part `r` is old
    /// part `perm[r]`. Rows stay closed.
    pub fn permute_parts(&self, perm: &Permutation) -> Result<Self> {
        self.check_len(perm.len())?;
        let values = self.values.select_columns(perm.as_slice());
        let names = perm.as_slice().iter().map(|&i| self.names[i].clone()).collect();
        Ok(Self { values, names })
    }

    /// Keeps only the given parts (in the given order) and re-closes.
    pub fn subcomposition(&self, parts: &[usize]) -> Result<Self> {
        validate_index_set(parts, self.n_parts())?;
        let names = parts.iter().map(|&i| self.names[i].clone()).collect::<Vec<_>>();
        close(&self.values.select_columns(parts))?.with_names(names)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n_parts() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} parts", self.n_parts()),
                found: format!("{len} parts"),
            });
        }
        Ok(())
    }
}

/// The denominator used by a log-ratio transform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReferenceSpec {
    /// Single reference part; the reference column is dropped from the
    /// output.
    Alr { part: usize },
    /// Geometric mean over `parts`; the targets are exactly `parts`.
    Clr { parts: Vec<usize> },
    /// Geometric mean over `reference`, applied to `targets`, which need not
    /// be contained in `reference`.
    SubClr {
        reference: Vec<usize>,
        targets: Vec<usize>,
    },
}

impl ReferenceSpec {
    pub fn validate(&self, n_parts: usize) -> Result<()> {
        match self {
            ReferenceSpec::Alr { part } => check_index(*part, n_parts),
            ReferenceSpec::Clr { parts } => validate_index_set(parts, n_parts),
            ReferenceSpec::SubClr { reference, targets } => {
                validate_index_set(reference, n_parts)?;
                validate_index_set(targets, n_parts)
            }
        }
    }

    /// Full clr over all `n_parts` parts in their natural order.
    pub fn full_clr(n_parts: usize) -> Self {
        ReferenceSpec::Clr {
            parts: (0..n_parts).collect(),
        }
    }

    fn is_full_clr(&self, n_parts: usize) -> bool {
        matches!(self, ReferenceSpec::Clr { parts }
            if parts.len() == n_parts && parts.iter().enumerate().all(|(i, &p)| i == p))
    }
}

/// Log-ratio transformed samples (`N x k`) tagged with their reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRatioMatrix {
    pub values: DMatrix<f64>,
    pub reference: ReferenceSpec,
    pub part_labels: Vec<String>,
    /// Labels of all parts of the composition the ratios were taken from.
    pub source_labels: Vec<String>,
}

impl LogRatioMatrix {
    /// Number of parts of the source composition.
    pub fn n_parts(&self) -> usize {
        self.source_labels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.values.ncols()
    }
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        Err(Error::IndexOutOfRange { index, len })
    } else {
        Ok(())
    }
}

pub(crate) fn validate_index_set(set: &[usize], len: usize) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyIndexSet);
    }
    let mut seen = vec![false; len];
    for &i in set {
        check_index(i, len)?;
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::DuplicateIndex(i));
        }
    }
    Ok(())
}

/// `log(X_i / X_part)` for every `i != part`, in the original column order.
pub fn alr_transform(x: &CompositionMatrix, part: usize) -> Result<LogRatioMatrix> {
    check_index(part, x.n_parts())?;
    let logs = x.log_values();
    let keep: Vec<usize> = (0..x.n_parts()).filter(|&i| i != part).collect();
    let mut values = logs.select_columns(&keep);
    let reference = logs.column(part).clone_owned();
    for mut column in values.column_iter_mut() {
        column -= &reference;
    }
    Ok(LogRatioMatrix {
        values,
        reference: ReferenceSpec::Alr { part },
        part_labels: keep.iter().map(|&i| x.names()[i].clone()).collect(),
        source_labels: x.names().to_vec(),
    })
}

/// `log(X_j / g(X_A))` for every `j` in `parts`, where `g` is the geometric
/// mean over `parts`.
pub fn clr_transform(x: &CompositionMatrix, parts: &[usize]) -> Result<LogRatioMatrix> {
    validate_index_set(parts, x.n_parts())?;
    let mut out = log_over_geometric_mean(x, parts, parts);
    out.reference = ReferenceSpec::Clr {
        parts: parts.to_vec(),
    };
    Ok(out)
}

/// `log(X_j / g(X_reference))` for every `j` in `targets`.
pub fn subclr_transform(
    x: &CompositionMatrix,
    reference: &[usize],
    targets: &[usize],
) -> Result<LogRatioMatrix> {
    validate_index_set(reference, x.n_parts())?;
    validate_index_set(targets, x.n_parts())?;
    Ok(log_over_geometric_mean(x, reference, targets))
}

/// Full clr over all parts.
pub fn clr(x: &CompositionMatrix) -> LogRatioMatrix {
    let all: Vec<usize> = (0..x.n_parts()).collect();
    clr_transform(x, &all).expect("full index set is valid")
}

fn log_over_geometric_mean(
    x: &CompositionMatrix,
    reference: &[usize],
    targets: &[usize],
) -> LogRatioMatrix {
    let logs = x.log_values();
    let log_gm: Vec<f64> = logs
        .row_iter()
        .map(|row| reference.iter().map(|&i| row[i]).sum::<f64>() / reference.len() as f64)
        .collect();
    let values = DMatrix::from_fn(x.n_samples(), targets.len(), |r, c| {
        logs[(r, targets[c])] - log_gm[r]
    });
    LogRatioMatrix {
        values,
        reference: ReferenceSpec::SubClr {
            reference: reference.to_vec(),
            targets: targets.to_vec(),
        },
        part_labels: targets.iter().map(|&i| x.names()[i].clone()).collect(),
        source_labels: x.names().to_vec(),
    }
}

/// Re-expresses log-ratio data under another reference without going back
/// to the composition.
///
/// Supported: alr(d) ↔ full clr (via `Fᵀ H⁻¹` and `F` after moving `d` to
/// the last slot) and alr(d) → alr(k) (subtracting the column
/// `log(X_k / X_d)`).
pub fn change_reference(y: &LogRatioMatrix, new_ref: &ReferenceSpec) -> Result<LogRatioMatrix> {
    let dim = y.n_parts();
    new_ref.validate(dim)?;
    if !describes_all_parts(y) {
        return Err(Error::IncompatibleReference(format!(
            "{:?} does not describe all {dim} parts",
            y.reference
        )));
    }
    let labels = &y.source_labels;
    match (&y.reference, new_ref) {
        (a, b) if a == b => Ok(y.clone()),
        (ReferenceSpec::Alr { part }, b) if b.is_full_clr(dim) => {
            // y columns are ordered as `moving_to_last(part)` minus the last
            let to_last = Permutation::moving_to_last(dim, *part)?;
            let z_perm = &y.values * h_inverse(dim) * f_matrix(dim);
            let values = z_perm.select_columns(to_last.inverse().as_slice());
            Ok(LogRatioMatrix {
                values,
                reference: new_ref.clone(),
                part_labels: labels.clone(),
                source_labels: labels.clone(),
            })
        }
        (a, ReferenceSpec::Alr { part }) if a.is_full_clr(dim) => {
            let to_last = Permutation::moving_to_last(dim, *part)?;
            let z_perm = y.values.select_columns(to_last.as_slice());
            let values = z_perm * f_matrix(dim).transpose();
            Ok(LogRatioMatrix {
                values,
                reference: new_ref.clone(),
                part_labels: to_last.as_slice()[..dim - 1]
                    .iter()
                    .map(|&i| labels[i].clone())
                    .collect(),
                source_labels: labels.clone(),
            })
        }
        (ReferenceSpec::Alr { part: old }, ReferenceSpec::Alr { part: new }) => {
            // column of log(X_new / X_old) inside y
            let pos = if new < old { *new } else { new - 1 };
            let shift = y.values.column(pos).clone_owned();
            let keep: Vec<usize> = (0..dim).filter(|i| i != new).collect();
            let mut values = DMatrix::zeros(y.n_samples(), dim - 1);
            for (c, &i) in keep.iter().enumerate() {
                if i == *old {
                    values.set_column(c, &(-&shift));
                } else {
                    let src = if i < *old { i } else { i - 1 };
                    values.set_column(c, &(y.values.column(src) - &shift));
                }
            }
            Ok(LogRatioMatrix {
                values,
                reference: new_ref.clone(),
                part_labels: keep.iter().map(|&i| labels[i].clone()).collect(),
                source_labels: labels.clone(),
            })
        }
        (a, b) => Err(Error::IncompatibleReference(format!(
            "cannot convert {a:?} to {b:?} without the composition"
        ))),
    }
}

fn describes_all_parts(y: &LogRatioMatrix) -> bool {
    match &y.reference {
        ReferenceSpec::Alr { .. } => y.n_columns() + 1 == y.n_parts(),
        r => r.is_full_clr(y.n_parts()) && y.n_columns() == y.n_parts(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows(data: &[&[f64]]) -> DMatrix<f64> {
        let d = data[0].len();
        DMatrix::from_row_iterator(data.len(), d, data.iter().flat_map(|r| r.iter().copied()))
    }

    #[test]
    fn closure_of_uniform_row() {
        let x = close(&rows(&[&[1.0, 1.0, 1.0, 1.0], &[2.0, 2.0, 2.0, 2.0]])).unwrap();
        for v in x.values().iter() {
            assert_eq!(*v, 0.25);
        }
    }

    #[test]
    fn closure_divides_by_row_sum() {
        let x = close(&rows(&[&[2.0, 3.0, 5.0], &[0.2, 0.3, 0.5]])).unwrap();
        assert_abs_diff_eq!(x.values()[(0, 0)], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(x.values()[(0, 1)], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(x.values()[(0, 2)], 0.5, epsilon = 1e-15);
        // already closed: unchanged
        assert_eq!(x.values()[(1, 0)], 0.2);
        assert_eq!(x.values()[(1, 1)], 0.3);
        assert_eq!(x.values()[(1, 2)], 0.5);
    }

    #[test]
    fn closure_rejects_zero_and_small_shapes() {
        let err = close(&rows(&[&[1.0, 0.0, 1.0], &[1.0, 1.0, 1.0]])).unwrap_err();
        assert!(matches!(
            err,
            Error::NonPositiveEntry { row: 0, column: 1, .. }
        ));
        assert!(matches!(
            close(&rows(&[&[1.0, 2.0, 3.0]])),
            Err(Error::DimensionTooSmall { .. })
        ));
        assert!(matches!(
            close(&rows(&[&[1.0], &[2.0]])),
            Err(Error::DimensionTooSmall { .. })
        ));
        assert!(close(&rows(&[&[1.0, f64::NAN], &[1.0, 1.0]])).is_err());
    }

    #[test]
    fn alr_of_equal_parts_is_zero() {
        let x = close(&rows(&[&[1.0; 4], &[3.0; 4]])).unwrap();
        let y = alr_transform(&x, 3).unwrap();
        assert_eq!(y.n_columns(), 3);
        assert!(y.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alr_direct_evaluation() {
        let x = close(&rows(&[&[0.2, 0.3, 0.5], &[1.0, 1.0, 1.0]])).unwrap();
        let y = alr_transform(&x, 2).unwrap();
        assert_abs_diff_eq!(y.values[(0, 0)], 0.4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(y.values[(0, 1)], 0.6f64.ln(), epsilon = 1e-15);
        assert_eq!(y.part_labels, vec!["x1", "x2"]);
        assert!(matches!(
            alr_transform(&x, 3),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn clr_rows_sum_to_zero() {
        let x = close(&rows(&[&[0.2, 0.3, 0.5], &[1.0, 1.0, 1.0]])).unwrap();
        let z = clr(&x);
        assert_abs_diff_eq!(z.values.row(0).sum(), 0.0, epsilon = 1e-15);
        assert!(z.values.row(1).iter().all(|&v| v == 0.0));
        assert!(matches!(clr_transform(&x, &[]), Err(Error::EmptyIndexSet)));
    }

    #[test]
    fn subclr_target_outside_reference() {
        let x = close(&rows(&[&[0.2, 0.3, 0.5], &[1.0, 1.0, 1.0]])).unwrap();
        let z = subclr_transform(&x, &[1, 2], &[0]).unwrap();
        assert_abs_diff_eq!(
            z.values[(0, 0)],
            (0.2 / 0.15f64.sqrt()).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn change_reference_rejects_partial_clr() {
        let x = close(&rows(&[&[0.2, 0.3, 0.5, 0.1], &[1.0, 2.0, 1.0, 1.0]])).unwrap();
        let z = clr_transform(&x, &[0, 1]).unwrap();
        assert!(matches!(
            change_reference(&z, &ReferenceSpec::Alr { part: 0 }),
            Err(Error::IncompatibleReference(_))
        ));
    }

    #[test]
    fn equal_parts_stay_zero_under_reference_changes() {
        let x = close(&rows(&[&[2.0; 5], &[7.0; 5]])).unwrap();
        let y = alr_transform(&x, 1).unwrap();
        let z = change_reference(&y, &ReferenceSpec::full_clr(5)).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-15));
        let y3 = change_reference(&y, &ReferenceSpec::Alr { part: 3 }).unwrap();
        assert!(y3.values.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn permute_and_subcomposition() {
        let x = close(&rows(&[&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]]))
            .unwrap()
            .with_names(vec!["a".into(), "b".into(), "c".into()])
            .unwrap();
        let p = x.permute_parts(&Permutation::new(vec![2, 0, 1]).unwrap()).unwrap();
        assert_eq!(p.names(), &["c", "a", "b"]);
        assert_eq!(p.values()[(0, 0)], x.values()[(0, 2)]);
        let s = x.subcomposition(&[0, 2]).unwrap();
        assert_abs_diff_eq!(s.values()[(0, 0)], 0.25, epsilon = 1e-15);
        assert!(x.with_names(vec!["a".into()]).is_err());
    }
}
