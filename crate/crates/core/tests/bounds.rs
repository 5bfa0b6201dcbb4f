// oracle digits are kept as printed by the high-precision reference
#![allow(clippy::excessive_precision)]

use approx::assert_relative_eq;
use kinetic_core::bounds::{
    budget, cross_reg_ulmc, err_bound, err_semiconvex_by_intervals, gaussian_kl, gaussian_w2, harnack_c, BudgetTheorem,
    ConstantsProfile, ErrCase, InitStats, RegimeParams,
};
use kinetic_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn k() -> ConstantsProfile {
    ConstantsProfile::default()
}

// Frozen values of the Harnack constant, evaluated in 30-digit arithmetic.
#[test]
fn harnack_reference_values() {
    let g = 32f64.sqrt();
    let cases = [
        (RegimeParams::new(1.0, 1.0, g, 1.0, 0.01).unwrap(), 19785.480106877772),
        (RegimeParams::new(1.0, 1.0, g, 50.0, 0.01).unwrap(), 5.4081949013987032),
        (RegimeParams::new(-1.0, 1.0, 1.0, 2.0, 0.01).unwrap(), 14138.847648791593),
    ];
    for (p, want) in cases {
        assert_relative_eq!(harnack_c(&p, &k()).unwrap(), want, max_relative = 1e-12);
    }
}

#[test]
fn gaussian_divergence_reference_values() {
    let m1 = DVector::from_vec(vec![0.5, -1.0]);
    let c1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
    let m2 = DVector::from_vec(vec![0.0, 0.2]);
    let c2 = DMatrix::from_row_slice(2, 2, &[1.0, -0.2, -0.2, 0.8]);
    assert_relative_eq!(gaussian_kl(&m1, &c1, &m2, &c2).unwrap(), 1.2915158642531614, max_relative = 1e-12);
    assert_relative_eq!(gaussian_w2(&m1, &c1, &m2, &c2).unwrap(), 1.4207309555507308, max_relative = 1e-10);
}

fn spd3() -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0..1.0f64, 9), prop::collection::vec(0.1..3.0f64, 3)).prop_map(|(g, e)| {
        let q = DMatrix::from_vec(3, 3, g).qr().q();
        let m = &q * DMatrix::from_diagonal(&DVector::from_vec(e)) * q.transpose();
        0.5 * (&m + m.transpose())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn harnack_decreases_in_horizon(alpha in 0.0..2.0f64, t in 0.01..20.0f64, f in 1.01..3.0f64) {
        let g = 32f64.sqrt();
        let p1 = RegimeParams::new(alpha, 2.0, g, t, 1e-3).unwrap();
        let p2 = RegimeParams { horizon: t * f, ..p1 };
        prop_assert!(harnack_c(&p2, &k()).unwrap() < harnack_c(&p1, &k()).unwrap());
    }

    #[test]
    fn talagrand_consistency(c1 in spd3(), c2 in spd3(), m in prop::collection::vec(-1.0..1.0f64, 3)) {
        let m1 = DVector::from_vec(m);
        let m2 = DVector::zeros(3);
        let kl = gaussian_kl(&m1, &c1, &m2, &c2).unwrap();
        let w = gaussian_w2(&m1, &c1, &m2, &c2).unwrap();
        let lmax = c2.clone().symmetric_eigen().eigenvalues.max();
        prop_assert!(kl >= w * w / (2.0 * lmax) * (1.0 - 1e-9), "kl {kl} w2 {w}");
    }

    #[test]
    fn budgets_are_monotone(e1 in 1e-6..1e-4f64, f in 1.1..5.0f64, kappa in 2.0..50.0f64, d in 1usize..64) {
        let e2 = e1 * f;
        let init = InitStats { w2_sq: Some(4.0), lyapunov: Some(10.0), chi2: Some(100.0) };
        for th in [BudgetTheorem::UlmcConvex, BudgetTheorem::RmUlmcConvex, BudgetTheorem::RmUlmcLsi, BudgetTheorem::RmUlmcPoincare] {
            let p = RegimeParams::new(1.0, kappa, (32.0 * kappa).sqrt(), 1.0, 1e-3).unwrap();
            let p_stiffer = RegimeParams { beta: 2.0 * kappa, ..p };
            let n = |eps: f64, p: &RegimeParams, d: usize| budget(th, eps, p, d, &init, &k()).unwrap().n;
            prop_assert!(n(e2, &p, d) <= n(e1, &p, d));
            prop_assert!(n(e1, &p_stiffer, d) >= n(e1, &p, d));
            prop_assert!(n(e1, &p, d + 1) >= n(e1, &p, d));
        }
        for th in [BudgetTheorem::UlmcConvex, BudgetTheorem::RmUlmcConvex] {
            let p = RegimeParams::new(0.0, kappa, (32.0 * kappa).sqrt(), 1.0, 1e-3).unwrap();
            let n = |eps: f64, d: usize| budget(th, eps, &p, d, &init, &k()).unwrap().n;
            prop_assert!(n(e2, d) <= n(e1, d));
            prop_assert!(n(e1, d + 1) >= n(e1, d));
        }
    }
}

#[test]
fn weakly_convex_err_is_the_finite_branch_at_alpha_zero() {
    let g = 32f64.sqrt();
    let p = RegimeParams::new(0.0, 1.0, g, 1.0, 0.01).unwrap();
    let e = 0.1;
    let v = err_bound(&p, &k(), e, e, ErrCase::WeaklyConvex).unwrap();
    let display = (1.0 / 0.01f64.powi(2)) * e * e + ((1.0f64 / 0.01).ln() / 0.01 + 1.0) * e * e;
    assert_relative_eq!(v, display, max_relative = 1e-12);
    assert!(matches!(err_bound(&p, &k(), e, e, ErrCase::StronglyConvex), Err(Error::Regime(_))));
    // the strongly convex branch blows up as alpha decreases
    let small = |a: f64| {
        let p = RegimeParams::new(a, 1.0, g, 1.0, 1e-3 * a).unwrap();
        err_bound(&p, &k(), e, 0.0, ErrCase::StronglyConvex).unwrap()
    };
    assert!(small(1e-3) > 100.0 * small(1e-1));
}

#[test]
fn semiconvex_err_two_evaluations_agree() {
    let p = RegimeParams::new(-1.0, 1.0, 1.0, 1.0, 0.01).unwrap();
    let direct = err_bound(&p, &k(), 1.0, 1.0, ErrCase::SemiConvex).unwrap();
    let split = err_semiconvex_by_intervals(&p, &k(), 1.0, 1.0).unwrap();
    assert_relative_eq!(direct, split, max_relative = 1e-12);
    // with a horizon past 1/|ω| the split evaluation is no larger
    let long = RegimeParams { horizon: 200.0, ..p };
    let d = err_bound(&long, &k(), 1.0, 1.0, ErrCase::SemiConvex).unwrap();
    let s = err_semiconvex_by_intervals(&long, &k(), 1.0, 1.0).unwrap();
    assert!(s <= d * (1.0 + 1e-12));
}

#[test]
fn cross_regularity_dual_evaluation() {
    let (d, q, g, b, h) = (4usize, 2.0, 32f64.sqrt(), 1.0, 0.01);
    let p = RegimeParams::new(1.0, b, g, 1.0, h).unwrap();
    let one = DVector::from_element(d, 1.0);
    let zero = DVector::zeros(d);
    let v = cross_reg_ulmc(&p, &k(), &one, &zero, &one, &zero, &one, q).unwrap();
    // per coordinate: every input contributes a unit square
    let per_coord = 1.0 / (g * h.powi(3)) + 1.0 / (g * h) + b * b * h.powi(3) * q / g + b * b * h.powi(4) * q + b * b * h.powi(5) * q / g;
    assert_relative_eq!(v, d as f64 * per_coord, max_relative = 1e-13);
    // doubling the position gap quadruples the leading term
    let two = DVector::from_element(d, 2.0);
    let v2 = cross_reg_ulmc(&p, &k(), &two, &zero, &one, &zero, &one, q).unwrap();
    assert_relative_eq!(v2 - v, 3.0 * d as f64 / (g * h.powi(3)), max_relative = 1e-12);
    assert!(cross_reg_ulmc(&p, &k(), &one, &zero, &one, &zero, &one, 1.5).is_err());
    let coarse = RegimeParams { h: 0.5, ..p };
    assert!(matches!(cross_reg_ulmc(&coarse, &k(), &one, &zero, &one, &zero, &one, q), Err(Error::Regime(_))));
}

#[test]
fn randomized_midpoint_strongly_convex_budget_formula() {
    let (a, b, d, eps, w2) = (0.5, 5.0, 8usize, 1e-3, 3.0);
    let p = RegimeParams::new(a, b, (32.0 * b).sqrt(), 1.0, 1e-3).unwrap();
    let init = InitStats { w2_sq: Some(w2), ..Default::default() };
    let out = budget(BudgetTheorem::RmUlmcConvex, eps, &p, d, &init, &k()).unwrap();
    let (kappa, df) = (b / a, d as f64);
    assert_relative_eq!(out.h, eps.powf(2.0 / 3.0) / (b.sqrt() * df.cbrt()), max_relative = 1e-13);
    let n = kappa * df.cbrt() / eps.powf(2.0 / 3.0) * (a * w2 / (eps * eps)).ln();
    assert_relative_eq!(out.n, n, max_relative = 1e-13);
}

#[test]
fn poincare_budget_scaling() {
    let init = InitStats { chi2: Some(50.0), ..Default::default() };
    let eps = 1e-2;
    let n = |kappa: f64, d: usize| {
        let p = RegimeParams::new(1.0, kappa, (32.0 * kappa).sqrt(), 1.0, 1e-3).unwrap();
        budget(BudgetTheorem::RmUlmcPoincare, eps, &p, d, &init, &k()).unwrap().n
    };
    assert_relative_eq!(n(64.0, 4) / n(1.0, 4), 64f64.powf(5.0 / 6.0), max_relative = 1e-12);
    let lc = 51f64.ln().cbrt();
    assert_relative_eq!(n(4.0, 27) / n(4.0, 1), (3.0 + lc) / (1.0 + lc), max_relative = 1e-12);
}
