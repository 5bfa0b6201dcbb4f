use approx::assert_relative_eq;
use kinetic_core::shifts::{
    b_lambda, certify_time_grid, lambda_grid, lambda_min_certify, matrix_m, omega_for, sym2_eigenvalues, ShiftSchedule,
};
use proptest::prelude::*;

#[test]
fn eta_at_start_of_unit_horizon() {
    let s = ShiftSchedule::continuous(1.0, 24.0, 1.0, 2.0).unwrap();
    assert_relative_eq!(s.eta_p(0.0).unwrap(), 24.0 / (1f64.exp() - 1.0), max_relative = 1e-14);
    assert_relative_eq!(s.eta_p(0.0).unwrap(), 13.967440964863834, max_relative = 1e-12);
}

#[test]
fn omega_values() {
    assert_relative_eq!(omega_for(1.0, 1.0, 32f64.sqrt()).unwrap(), 1.0 / (3.0 * 32f64.sqrt()), max_relative = 1e-14);
    assert_relative_eq!(omega_for(-1.0, 1.0, 1.0).unwrap(), -1.0 / 3.0, max_relative = 1e-14);
}

fn schedules() -> Vec<ShiftSchedule> {
    let mut out = Vec::new();
    for (a, b, g) in [(1.0, 1.0, 32f64.sqrt()), (0.0, 1.0, 32f64.sqrt()), (-1.0, 1.0, 1.0), (0.1, 10.0, 2.0)] {
        for t in [0.5, 2.0] {
            out.push(ShiftSchedule::for_regime(a, b, g, 192.0, t).unwrap());
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn eta_is_increasing_and_gamma_t_dominates(f1 in 0.0..0.999f64, f2 in 0.0..0.999f64) {
        let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
        for s in schedules() {
            let (t1, t2) = (lo * s.horizon, hi * s.horizon);
            let (e1, e2) = (s.eta_p(t1).unwrap(), s.eta_p(t2).unwrap());
            prop_assert!(e1 <= e2);
            if hi > lo + 1e-9 { prop_assert!(e1 < e2); }
            prop_assert!(s.gamma_t(t1).unwrap() >= s.gamma);
            prop_assert!(s.eta_dot(t1).unwrap() > 0.0);
            assert_relative_eq!(s.eta_x(t1).unwrap() / e1, s.gamma_t(t1).unwrap() / 2.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn finite_difference_derivative_matches_the_ode(f in 0.05..0.95f64) {
        for s in schedules() {
            let t = f * s.horizon;
            let dt = 1e-5 * s.horizon;
            let fd = (s.eta_p(t + dt).unwrap() - s.eta_p(t - dt).unwrap()) / (2.0 * dt);
            let e = s.eta_p(t).unwrap();
            let ode = s.omega * e + e * e / s.c0;
            prop_assert!((fd - ode).abs() <= 1e-6 * ode.abs(), "fd {fd} ode {ode}");
        }
    }

    #[test]
    fn modified_schedule_tends_to_continuous(f in 0.0..0.99f64) {
        let c = ShiftSchedule::continuous(0.2, 192.0, 1.0, 3.0).unwrap();
        let t = f * c.horizon;
        let exact = c.eta_p(t).unwrap();
        let mut prev = f64::INFINITY;
        for a in [1.0, 1e-3, 1e-6] {
            let m = ShiftSchedule::modified(0.2, 192.0, a, 1.0, 1e-3, 3.0).unwrap();
            let gap = (m.eta_p(t).unwrap() - exact).abs() / exact;
            prop_assert!(gap <= prev);
            prev = gap;
        }
        prop_assert!(prev <= 1e-6);
    }

    #[test]
    fn b_lambda_bounds_hold(f in 0.0..0.999f64) {
        // β-end ratio bound and the strongly convex lower bound
        let s = ShiftSchedule::for_regime(1.0, 1.0, 32f64.sqrt(), 192.0, 3.0).unwrap();
        let t = f * s.horizon;
        let g = s.gamma_t(t).unwrap();
        prop_assert!(b_lambda(&s, t, 1.0).unwrap() / (g * g) <= 0.75);
        let e = s.eta_p(t).unwrap();
        prop_assert!(b_lambda(&s, t, 1.0).unwrap() >= 1.0 + g * e / 8.0);
    }
}

#[test]
fn m_eigenvalues_split_as_b_over_gamma() {
    let s = ShiftSchedule::for_regime(0.5, 2.0, 8.0, 192.0, 1.0).unwrap();
    for t in [0.0, 0.5, 0.9] {
        let g = s.gamma_t(t).unwrap();
        let b = b_lambda(&s, t, 1.0).unwrap();
        let (lo, hi) = sym2_eigenvalues(&matrix_m(&s, t, 1.0).unwrap());
        let mut want = [b / g, g - b / g];
        want.sort_by(f64::total_cmp);
        assert_relative_eq!(lo, want[0], max_relative = 1e-12);
        assert_relative_eq!(hi, want[1], max_relative = 1e-12);
    }
}

#[test]
fn certification_across_regimes_and_frictions() {
    let cases = [
        (1.0, 1.0, 32f64.sqrt()),
        (1.0, 1.0, 2.0 * 32f64.sqrt()),
        (0.0, 1.0, 32f64.sqrt()),
        (0.0, 1.0, 2.0 * 32f64.sqrt()),
        (-1.0, 1.0, 1.0),
        (-1.0, 1.0, 0.5),
    ];
    for (a, b, g) in cases {
        for t in [0.1, 1.0, 10.0] {
            let s = ShiftSchedule::for_regime(a, b, g, 192.0, t).unwrap();
            let rep = lambda_min_certify(&s, &certify_time_grid(t, 1000), &lambda_grid(a, b, 65)).unwrap();
            assert_eq!(rep.violations, 0, "alpha={a} gamma={g} T={t}");
        }
    }
}

#[test]
fn certification_rejects_small_c0() {
    let s = ShiftSchedule::for_regime(1.0, 1.0, 32f64.sqrt(), 10.0, 1.0).unwrap();
    assert!(lambda_min_certify(&s, &[0.0], &[1.0]).is_err());
}
