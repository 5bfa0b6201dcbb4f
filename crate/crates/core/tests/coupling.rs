use approx::assert_relative_eq;
use kinetic_core::bounds::{gaussian_kl, harnack_proof_integral, ConstantsProfile, RegimeParams};
use kinetic_core::coupling::{
    diffuse_then_shift_run, evolve_coupled, girsanov_kl_bound, ibm_endpoint_law, kl_ibm_exact, twisted_dist, Dynamics,
    OdeOptions, ShiftRule,
};
use kinetic_core::kernels::{ExactGaussianKernel, GaussianMoments, PhaseState};
use kinetic_core::potentials::Potential;
use kinetic_core::shifts::ShiftSchedule;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn vec3() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, 3).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ibm_kl_closed_form_matches_gaussian_kl(dx in vec3(), dp in vec3(), g in 0.1..5.0f64, t in 0.1..5.0f64) {
        let a = PhaseState::new(dx.clone(), dp.clone()).unwrap();
        let b = PhaseState::zeros(3);
        let (la, lb) = (ibm_endpoint_law(g, t, &a), ibm_endpoint_law(g, t, &b));
        let want = gaussian_kl(&la.mean, &la.cov, &lb.mean, &lb.cov).unwrap();
        let got = kl_ibm_exact(g, t, &dx, &dp).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1e-3), "{got} vs {want}");
    }
}

struct Setup {
    pot: Potential,
    params: RegimeParams,
    main: PhaseState,
    aux: PhaseState,
}

fn strongly_convex_setup() -> Setup {
    let g = 32f64.sqrt();
    Setup {
        pot: Potential::make_gaussian(&[1.0, 1.0]).unwrap(),
        params: RegimeParams::new(1.0, 1.0, g, 1.0, 0.01).unwrap(),
        main: PhaseState::new(v(&[0.3, -0.2]), v(&[0.1, 0.4])).unwrap(),
        aux: PhaseState::zeros(2),
    }
}

fn schedule(p: &RegimeParams) -> ShiftSchedule {
    ShiftSchedule::for_regime(p.alpha, p.beta, p.gamma, p.c0, p.horizon).unwrap()
}

#[test]
fn girsanov_bound_dominates_exact_endpoint_kl() {
    let s = strongly_convex_setup();
    let rule = ShiftRule::Schedule(schedule(&s.params));
    let bound = girsanov_kl_bound(Dynamics::Uld(&s.pot), &rule, &s.main, &s.aux, 1e-4).unwrap();
    assert!(!bound.truncation_warning);
    let kern = ExactGaussianKernel::new(&DMatrix::identity(2, 2), s.params.gamma, s.params.horizon).unwrap();
    let la: GaussianMoments = kern.propagate(&GaussianMoments::point(&s.main));
    let lb = kern.propagate(&GaussianMoments::point(&s.aux));
    let exact = gaussian_kl(&la.mean, &la.cov, &lb.mean, &lb.cov).unwrap();
    assert!(exact > 0.0 && bound.kl_bound >= exact, "girsanov {} < exact {exact}", bound.kl_bound);
}

#[test]
fn girsanov_bound_within_proof_integral() {
    let s = strongly_convex_setup();
    let sched = schedule(&s.params);
    let rule = ShiftRule::Schedule(sched);
    let bound = girsanov_kl_bound(Dynamics::Uld(&s.pot), &rule, &s.main, &s.aux, 1e-4).unwrap();
    let d0 = twisted_dist(&(&s.main.x - &s.aux.x), &(&s.main.p - &s.aux.p), sched.gamma_t(0.0).unwrap());
    let integral = harnack_proof_integral(&s.params, &ConstantsProfile::default()).unwrap();
    assert!(bound.kl_bound <= integral * d0 * d0, "{} > {}", bound.kl_bound, integral * d0 * d0);
}

#[test]
fn shifted_pair_meets_at_the_horizon() {
    let s = strongly_convex_setup();
    let rule = ShiftRule::Schedule(schedule(&s.params));
    let tr = evolve_coupled(Dynamics::Uld(&s.pot), &rule, &s.main, &s.aux, &OdeOptions::new(1e-4, 0.999)).unwrap();
    let first = tr.records.first().unwrap().twisted_dist;
    let last = tr.records.last().unwrap().twisted_dist;
    assert!(last < 1e-3 * first, "{last} vs {first}");
    assert!(tr.records.windows(2).all(|w| w[1].energy >= w[0].energy));
}

#[test]
fn energy_is_nondecreasing_for_nonconvex_potential() {
    let pot = Potential::make_trig_nonconvex(3, 2.0).unwrap();
    let rule = ShiftRule::Schedule(ShiftSchedule::for_regime(-2.0, 2.0, 2.0, 192.0, 1.5).unwrap());
    let main = PhaseState::new(v(&[1.0, -0.4, 0.2]), v(&[0.0, 0.3, -0.1])).unwrap();
    let aux = PhaseState::zeros(3);
    let tr = evolve_coupled(Dynamics::Uld(&pot), &rule, &main, &aux, &OdeOptions::new(1e-3, 1.49)).unwrap();
    assert!(tr.records.windows(2).all(|w| w[1].energy >= w[0].energy && w[1].t > w[0].t));
}

#[test]
fn unshifted_windows_contract_synchronously() {
    let pot = Potential::make_gaussian(&[1.0, 4.0]).unwrap();
    let sched = ShiftSchedule::modified(0.0, 0.0, 1.0, 2.0, 0.05, 32f64.sqrt() * 2.0).unwrap();
    let main = PhaseState::new(v(&[1.0, -1.0]), v(&[0.5, 0.5])).unwrap();
    let ws = diffuse_then_shift_run(&pot, &sched, &main, &PhaseState::zeros(2)).unwrap();
    assert_eq!(ws.len(), 40);
    assert!(ws.iter().all(|w| w.factor <= 1.0 + 1e-12 && w.rate_integral == 0.0));
}

#[test]
fn optimal_ibm_shift_attains_exact_kl() {
    let (g, t) = (1.3, 2.0);
    let main = PhaseState::new(v(&[0.4]), v(&[-0.7])).unwrap();
    let aux = PhaseState::zeros(1);
    let rule = ShiftRule::OptimalIbm { gamma: g, horizon: t };
    let bound = girsanov_kl_bound(Dynamics::IntegratedBm, &rule, &main, &aux, 1e-3).unwrap();
    assert_relative_eq!(bound.kl_bound, kl_ibm_exact(g, t, &main.x, &main.p).unwrap(), max_relative = 1e-4);
}
