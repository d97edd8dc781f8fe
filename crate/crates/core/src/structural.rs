//! Constant matrices that tie the log-ratio representations together.
//!
//! For `D` parts:
//!
//! * `F = [I_{D-1}, -j_{D-1}]` maps clr coordinates to alr coordinates with
//!   the last part as reference (`Y = F Z`).
//! * `H = F Fᵀ = I_{D-1} + J`, with exact inverse `H⁻¹ = I - J/D`.
//! * `G = I_D - J/D`, the centering projection (`G = Fᵀ H⁻¹ F`).
//! * `P` permutes parts: `(P x)_r = x_{perm[r]}`.
//! * `Q_P = F P Fᵀ H⁻¹` realises the same permutation on alr coordinates.
//!
//! Every matrix is built entry by entry from its integer definition.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Which structural matrix a [`StructuralMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    F,
    H,
    G,
    P,
    QP,
}

impl Role {
    fn name(self) -> &'static str {
        match self {
            Role::F => "F",
            Role::H => "H",
            Role::G => "G",
            Role::P => "P",
            Role::QP => "Q_P",
        }
    }
}

/// A permutation of `D` parts, stored as `perm[new_position] = old_index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() {
                return Err(Error::InvalidPermutation(format!(
                    "entry {p} out of range for length {}",
                    perm.len()
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidPermutation(format!("entry {p} repeated")));
            }
        }
        Ok(Self(perm))
    }

    pub fn identity(len: usize) -> Self {
        Self((0..len).collect())
    }

    /// The permutation that moves `part` to the last slot and keeps the
    /// remaining parts in their original order.
    pub fn moving_to_last(len: usize, part: usize) -> Result<Self> {
        if part >= len {
            return Err(Error::IndexOutOfRange { index: part, len });
        }
        let mut order: Vec<usize> = (0..len).filter(|&i| i != part).collect();
        order.push(part);
        Ok(Self(order))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (new, &old) in self.0.iter().enumerate() {
            inv[old] = new;
        }
        Self(inv)
    }

    /// Row-permuted identity: `P[r, perm[r]] = 1`.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let n = self.0.len();
        DMatrix::from_fn(n, n, |r, c| if self.0[r] == c { 1.0 } else { 0.0 })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrix {
    pub role: Role,
    pub values: DMatrix<f64>,
    /// Number of parts `D` the matrix refers to.
    pub dim: usize,
}

/// `F = [I_{D-1}, -j_{D-1}]`, a `(D-1) x D` matrix.
pub fn f_matrix(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim - 1, dim, |r, c| {
        if c == dim - 1 {
            -1.0
        } else if r == c {
            1.0
        } else {
            0.0
        }
    })
}

/// `H = I_{D-1} + J_{D-1}`.
pub fn h_matrix(dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim - 1, dim - 1, |r, c| if r == c { 2.0 } else { 1.0 })
}

/// Exact inverse of `H`: `I_{D-1} - J_{D-1} / D`.
pub fn h_inverse(dim: usize) -> DMatrix<f64> {
    let d = dim as f64;
    DMatrix::from_fn(dim - 1, dim - 1, |r, c| {
        if r == c {
            1.0 - 1.0 / d
        } else {
            -1.0 / d
        }
    })
}

/// `G = I_D - J_D / D`.
pub fn g_matrix(dim: usize) -> DMatrix<f64> {
    let d = dim as f64;
    DMatrix::from_fn(dim, dim, |r, c| {
        if r == c {
            1.0 - 1.0 / d
        } else {
            -1.0 / d
        }
    })
}

/// `Q_P = F P Fᵀ H⁻¹`.
pub fn q_matrix(perm: &Permutation) -> DMatrix<f64> {
    let dim = perm.len();
    let f = f_matrix(dim);
    &f * perm.to_matrix() * f.transpose() * h_inverse(dim)
}

pub fn build_structural(
    role: Role,
    dim: usize,
    permutation: Option<&Permutation>,
) -> Result<StructuralMatrix> {
    if dim < 2 {
        return Err(Error::DimensionTooSmall {
            what: "number of parts",
            found: dim,
            min: 2,
        });
    }
    let perm = match (role, permutation) {
        (Role::P | Role::QP, None) => return Err(Error::MissingPermutation(role.name())),
        (_, Some(p)) if p.len() != dim => {
            return Err(Error::DimensionMismatch {
                expected: format!("permutation of {dim} parts"),
                found: format!("permutation of {} parts", p.len()),
            })
        }
        (_, p) => p,
    };
    let values = match role {
        Role::F => f_matrix(dim),
        Role::H => h_matrix(dim),
        Role::G => g_matrix(dim),
        Role::P => perm.expect("checked above").to_matrix(),
        Role::QP => q_matrix(perm.expect("checked above")),
    };
    Ok(StructuralMatrix { role, values, dim })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).amax()
    }

    #[test]
    fn f_for_three_parts() {
        let f = build_structural(Role::F, 3, None).unwrap();
        assert_eq!(
            f.values,
            DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0])
        );
    }

    #[test]
    fn h_for_three_parts() {
        let h = build_structural(Role::H, 3, None).unwrap();
        assert_eq!(h.values, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn permutation_roles_need_a_permutation() {
        assert!(matches!(
            build_structural(Role::QP, 4, None),
            Err(Error::MissingPermutation("Q_P"))
        ));
        assert!(matches!(
            build_structural(Role::P, 4, None),
            Err(Error::MissingPermutation("P"))
        ));
        let p = Permutation::identity(3);
        assert!(matches!(
            build_structural(Role::P, 4, Some(&p)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rejects_bad_permutations() {
        assert!(Permutation::new(vec![0, 0, 1]).is_err());
        assert!(Permutation::new(vec![0, 3, 1]).is_err());
    }

    #[test]
    fn identities_hold_for_small_dimensions() {
        for dim in 3..=10 {
            let f = f_matrix(dim);
            let g = g_matrix(dim);
            let h = h_matrix(dim);
            let hinv = h_inverse(dim);
            assert!(max_abs_diff(&(&f * &g), &f) < 1e-12);
            assert!(max_abs_diff(&(&g * &g), &g) < 1e-12);
            assert!(max_abs_diff(&(f.transpose() * &hinv * &f), &g) < 1e-12);
            assert!(max_abs_diff(&(&f * f.transpose()), &h) < 1e-12);
            assert!(max_abs_diff(&(&h * &hinv), &DMatrix::identity(dim - 1, dim - 1)) < 1e-12);
        }
    }

    #[test]
    fn moving_to_last_keeps_order() {
        let p = Permutation::moving_to_last(5, 1).unwrap();
        assert_eq!(p.as_slice(), &[0, 2, 3, 4, 1]);
        assert_eq!(p.inverse().as_slice(), &[0, 4, 1, 2, 3]);
    }
}
