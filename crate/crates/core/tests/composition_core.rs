mod common;

use approx::assert_abs_diff_eq;
use coda_pcor::composition::{
    alr_transform, change_reference, clr, clr_transform, close, subclr_transform, ReferenceSpec,
};
use coda_pcor::error::Error;
use coda_pcor::structural::{
    build_structural, f_matrix, g_matrix, h_inverse, h_matrix, Permutation, Role,
};
use common::{lognormal, max_diff, random_order, rng, single_row};
use nalgebra::DMatrix;

#[test]
fn closure_examples() {
    let x = single_row(&[1.0, 1.0, 1.0, 1.0]);
    for v in x.values().row(0).iter() {
        assert_eq!(*v, 0.25);
    }
    let x = single_row(&[2.0, 3.0, 5.0]);
    assert_abs_diff_eq!(x.values()[(0, 0)], 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(x.values()[(0, 1)], 0.3, epsilon = 1e-15);
    assert_abs_diff_eq!(x.values()[(0, 2)], 0.5, epsilon = 1e-15);
    let again = close(x.values()).unwrap();
    assert!(max_diff(again.values(), x.values()) < 1e-15);
}

#[test]
fn closure_rows_sum_to_one() {
    let x = lognormal(50, 7, 3).unwrap();
    for row in x.values().row_iter() {
        assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn closure_errors() {
    let zero = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    assert!(matches!(
        close(&zero),
        Err(Error::NonPositiveEntry { row: 0, column: 1, .. })
    ));
    let nan = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 1.0, 1.0]);
    assert!(matches!(close(&nan), Err(Error::NonPositiveEntry { .. })));
    let narrow = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
    assert!(matches!(close(&narrow), Err(Error::DimensionTooSmall { .. })));
    let short = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
    assert!(matches!(close(&short), Err(Error::DimensionTooSmall { .. })));
}

#[test]
fn alr_examples() {
    let y = alr_transform(&single_row(&[0.25; 4]), 3).unwrap();
    assert!(y.values.row(0).iter().all(|&v| v == 0.0));
    assert_eq!(y.reference, ReferenceSpec::Alr { part: 3 });

    let y = alr_transform(&single_row(&[0.2, 0.3, 0.5]), 2).unwrap();
    assert_abs_diff_eq!(y.values[(0, 0)], 0.4f64.ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(y.values[(0, 1)], 0.6f64.ln(), epsilon = 1e-15);

    let x = single_row(&[0.2, 0.3, 0.5]);
    assert!(matches!(
        alr_transform(&x, 3),
        Err(Error::IndexOutOfRange { index: 3, len: 3 })
    ));
}

#[test]
fn alr_drops_reference_and_keeps_order() {
    let x = lognormal(5, 5, 1).unwrap().with_names(
        ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect(),
    )
    .unwrap();
    let y = alr_transform(&x, 1).unwrap();
    assert_eq!(y.part_labels, vec!["a", "c", "d", "e"]);
    let logs = x.log_values();
    assert_abs_diff_eq!(y.values[(2, 1)], logs[(2, 2)] - logs[(2, 1)], epsilon = 1e-15);
}

#[test]
fn alr_equals_f_times_clr() {
    for d in 3..=8 {
        let x = lognormal(20, d, d as u64).unwrap();
        let z = clr(&x);
        let y = alr_transform(&x, d - 1).unwrap();
        let f = f_matrix(d);
        assert!(max_diff(&y.values, &(&z.values * f.transpose())) < 1e-12);
        // right inverse: Z = Y H⁻¹ F, row-wise Fᵀ H⁻¹ Y
        assert!(max_diff(&z.values, &(&y.values * h_inverse(d) * &f)) < 1e-12);
    }
}

#[test]
fn clr_examples() {
    let z = clr(&single_row(&[0.25; 4]));
    assert!(z.values.row(0).iter().all(|&v| v == 0.0));

    let z = clr(&single_row(&[0.2, 0.3, 0.5]));
    assert_abs_diff_eq!(z.values.row(0).sum(), 0.0, epsilon = 1e-15);

    let z = subclr_transform(&single_row(&[0.2, 0.3, 0.5]), &[1, 2], &[0]).unwrap();
    assert_abs_diff_eq!(z.values[(0, 0)], (0.2 / 0.15f64.sqrt()).ln(), epsilon = 1e-15);

    let x = single_row(&[0.2, 0.3, 0.5]);
    assert!(matches!(clr_transform(&x, &[]), Err(Error::EmptyIndexSet)));
    assert!(matches!(clr_transform(&x, &[0, 0]), Err(Error::DuplicateIndex(0))));
}

#[test]
fn clr_rows_sum_to_zero() {
    let x = lognormal(40, 9, 5).unwrap();
    let z = clr(&x);
    for row in z.values.row_iter() {
        assert!(row.sum().abs() < 1e-10);
    }
    let z = clr_transform(&x, &[1, 4, 6]).unwrap();
    for row in z.values.row_iter() {
        assert!(row.sum().abs() < 1e-10);
    }
}

#[test]
fn clr_scaling_identity() {
    // log(X_j / g(X)) = ((D-1)/D) log(X_j / g(X_{D_j}))
    let d = 6;
    let x = lognormal(30, d, 8).unwrap();
    let z = clr(&x);
    for j in 0..d {
        let others: Vec<usize> = (0..d).filter(|&k| k != j).collect();
        let zj = subclr_transform(&x, &others, &[j]).unwrap();
        let factor = (d as f64 - 1.0) / d as f64;
        for r in 0..30 {
            assert_abs_diff_eq!(z.values[(r, j)], factor * zj.values[(r, 0)], epsilon = 1e-12);
        }
    }
}

#[test]
fn structural_examples() {
    let f = build_structural(Role::F, 3, None).unwrap();
    assert_eq!(f.values, DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.0, 1.0, -1.0]));
    assert_eq!(f.dim, 3);
    let h = build_structural(Role::H, 3, None).unwrap();
    assert_eq!(h.values, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
    assert!(matches!(
        build_structural(Role::QP, 3, None),
        Err(Error::MissingPermutation(_))
    ));
    assert!(matches!(
        build_structural(Role::G, 1, None),
        Err(Error::DimensionTooSmall { .. })
    ));
}

#[test]
fn q_p_swaps_alr_reference() {
    // swapping parts 2 and 3 maps (log x1/x3, log x2/x3) to (log x1/x2, log x3/x2)
    let perm = Permutation::new(vec![0, 2, 1]).unwrap();
    let q = build_structural(Role::QP, 3, Some(&perm)).unwrap().values;
    let x = lognormal(25, 3, 4).unwrap();
    let y = alr_transform(&x, 2).unwrap().values;
    let mapped = &y * q.transpose();
    let logs = x.log_values();
    for r in 0..25 {
        assert_abs_diff_eq!(mapped[(r, 0)], logs[(r, 0)] - logs[(r, 1)], epsilon = 1e-12);
        assert_abs_diff_eq!(mapped[(r, 1)], logs[(r, 2)] - logs[(r, 1)], epsilon = 1e-12);
    }
}

#[test]
fn q_p_matches_permuted_alr_for_random_permutations() {
    let mut r = rng(17);
    for d in 3..=7 {
        let x = lognormal(15, d, 100 + d as u64).unwrap();
        for _ in 0..5 {
            let perm = Permutation::new(random_order(&mut r, d)).unwrap();
            let q = build_structural(Role::QP, d, Some(&perm)).unwrap().values;
            let y = alr_transform(&x, d - 1).unwrap().values;
            let direct = alr_transform(&x.permute_parts(&perm).unwrap(), d - 1).unwrap().values;
            assert!(max_diff(&(&y * q.transpose()), &direct) < 1e-12);
        }
    }
}

#[test]
fn structural_identities_and_permutation_invariance() {
    let mut r = rng(3);
    for d in 3..=10 {
        let (f, g, h, hinv) = (f_matrix(d), g_matrix(d), h_matrix(d), h_inverse(d));
        assert!(max_diff(&(&f * &g), &f) < 1e-12);
        assert!(max_diff(&(&g * &g), &g) < 1e-12);
        assert!(max_diff(&(f.transpose() * &hinv * &f), &g) < 1e-12);
        assert!(max_diff(&(&f * f.transpose()), &h) < 1e-12);
        for _ in 0..20 {
            let p = Permutation::new(random_order(&mut r, d)).unwrap().to_matrix();
            assert!(max_diff(&(&p * &g * p.transpose()), &g) < 1e-12);
        }
    }
}

#[test]
fn change_reference_round_trips() {
    let d = 5;
    let x = lognormal(30, d, 12).unwrap();
    let z = clr(&x);
    for part in 0..d {
        let y = change_reference(&z, &ReferenceSpec::Alr { part }).unwrap();
        let direct = alr_transform(&x, part).unwrap();
        assert!(max_diff(&y.values, &direct.values) < 1e-12);
        assert_eq!(y.part_labels, direct.part_labels);
        let back = change_reference(&y, &ReferenceSpec::full_clr(d)).unwrap();
        assert!(max_diff(&back.values, &z.values) < 1e-12);
    }
}

#[test]
fn change_between_alr_references() {
    let x = lognormal(30, 4, 21).unwrap();
    let y4 = alr_transform(&x, 3).unwrap();
    let y3 = change_reference(&y4, &ReferenceSpec::Alr { part: 2 }).unwrap();
    let direct = alr_transform(&x, 2).unwrap();
    assert!(max_diff(&y3.values, &direct.values) < 1e-12);
    assert_eq!(y3.part_labels, direct.part_labels);
}

#[test]
fn equal_parts_stay_zero_under_reference_changes() {
    let x = single_row(&[0.25; 4]);
    let y = alr_transform(&x, 0).unwrap();
    for target in [
        ReferenceSpec::full_clr(4),
        ReferenceSpec::Alr { part: 2 },
        ReferenceSpec::Alr { part: 0 },
    ] {
        let out = change_reference(&y, &target).unwrap();
        assert!(out.values.iter().all(|&v| v == 0.0), "{target:?}");
    }
}

#[test]
fn incompatible_reference_changes_are_rejected() {
    let x = lognormal(10, 4, 2).unwrap();
    let partial = clr_transform(&x, &[0, 1, 2]).unwrap();
    assert!(matches!(
        change_reference(&partial, &ReferenceSpec::Alr { part: 0 }),
        Err(Error::IncompatibleReference(_))
    ));
    let y = alr_transform(&x, 0).unwrap();
    assert!(matches!(
        change_reference(
            &y,
            &ReferenceSpec::SubClr {
                reference: vec![0, 1],
                targets: vec![2]
            }
        ),
        Err(Error::IncompatibleReference(_))
    ));
}
