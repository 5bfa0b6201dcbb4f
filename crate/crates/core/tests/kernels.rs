use approx::assert_relative_eq;
use kinetic_core::kernels::{
    midpoint_u_density, midpoint_v_density, run_replicas, ChainConfig, ExactGaussianKernel, GaussianMoments, InitLaw,
    KernelKind, LastStep, PhaseState,
};
use kinetic_core::metrics::{rm_ulmc_moment_law, ulmc_exact_law};
use kinetic_core::par::with_threads;
use kinetic_core::potentials::Potential;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn start() -> PhaseState {
    PhaseState::new(DVector::from_vec(vec![1.0, -0.5]), DVector::from_vec(vec![0.3, 0.8])).unwrap()
}

fn cfg(kernel: KernelKind, gamma: f64, h: f64, n_steps: usize, seed: u64) -> ChainConfig {
    ChainConfig { gamma, h, n_steps, last_step: LastStep::Same, seed, kernel }
}

/// Max over coordinates of |empirical - predicted| in standard errors, for
/// means and variances of the final state.
fn worst_z(finals: &[DVector<f64>], law: &GaussianMoments) -> f64 {
    let n = finals.len() as f64;
    let dim = law.mean.len();
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        let xs: Vec<f64> = finals.iter().map(|z| z[i]).collect();
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - law.mean[i]).powi(2)).sum::<f64>() / n;
        let s2 = law.cov[(i, i)];
        worst = worst.max((mean - law.mean[i]).abs() / (s2 / n).sqrt());
        // fourth moment of a Gaussian gives Var[(x-m)²] = 2σ⁴
        worst = worst.max((var - s2).abs() / (s2 * (2.0 / n).sqrt()));
    }
    worst
}

fn finals(pot: &Potential, c: &ChainConfig, n: usize) -> Vec<DVector<f64>> {
    run_replicas(pot, &InitLaw::Point(start()), c, n, 0, false)
        .unwrap()
        .into_iter()
        .map(|s| s.final_state.stacked())
        .collect()
}

#[test]
fn samplers_are_exact_on_the_zero_potential() {
    let pot = Potential::zero(2);
    let (g, h, n) = (1.3, 0.2, 5);
    let exact = ExactGaussianKernel::new(&DMatrix::zeros(2, 2), g, h * n as f64)
        .unwrap()
        .propagate(&GaussianMoments::point(&start()));
    for (kernel, seed) in [(KernelKind::Ulmc, 11), (KernelKind::RmUlmc, 12)] {
        let z = worst_z(&finals(&pot, &cfg(kernel, g, h, n, seed), 100_000), &exact);
        assert!(z <= 4.0, "{kernel:?}: {z:.2} standard errors");
    }
}

#[test]
fn moment_maps_agree_on_the_zero_potential() {
    let hess = DMatrix::zeros(2, 2);
    let init = GaussianMoments::point(&start());
    let a = ulmc_exact_law(&hess, 0.9, 0.1, 7, &init).unwrap();
    let b = rm_ulmc_moment_law(&hess, 0.9, 0.1, 7, false, &init).unwrap();
    let c = ExactGaussianKernel::new(&hess, 0.9, 0.7).unwrap().propagate(&init);
    for m in [&a, &b] {
        assert!((&m.mean - &c.mean).amax() < 1e-12);
        assert!((&m.cov - &c.cov).amax() < 1e-10);
    }
}

#[test]
fn rm_moment_map_matches_simulation() {
    let pot = Potential::make_gaussian(&[1.0, 9.0]).unwrap();
    let hess = pot.quadratic_hessian().unwrap();
    let (g, h, n) = (2.0, 0.15, 6);
    let law = rm_ulmc_moment_law(&hess, g, h, n, false, &GaussianMoments::point(&start())).unwrap();
    let z = worst_z(&finals(&pot, &cfg(KernelKind::RmUlmc, g, h, n, 99), 100_000), &law);
    assert!(z <= 4.0, "{z:.2} standard errors");
}

#[test]
fn replicas_do_not_depend_on_thread_count() {
    let pot = Potential::make_trig_nonconvex(3, 2.0).unwrap();
    let init = InitLaw::Point(PhaseState::zeros(3));
    let c = cfg(KernelKind::RmUlmc, 1.0, 0.1, 20, 5);
    let run = |t| with_threads(t, || run_replicas(&pot, &init, &c, 64, 5, false).unwrap()).unwrap();
    let (a, b) = (run(1), run(3));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.final_state.stacked(), y.final_state.stacked());
        assert_eq!(x.grad_evals, y.grad_evals);
    }
}

fn midpoint_mean(density: fn(f64, f64, f64) -> f64, x: f64) -> f64 {
    let n = 20_000;
    (0..n)
        .map(|i| {
            let w = (i as f64 + 0.5) / n as f64;
            w * density(x, 1.0, w) / n as f64
        })
        .sum()
}

#[test]
fn midpoint_fractions_small_friction_limits() {
    // u has density → 2(1 - u), v becomes uniform
    assert_relative_eq!(midpoint_mean(midpoint_u_density, 1e-6), 1.0 / 3.0, max_relative = 1e-5);
    assert_relative_eq!(midpoint_mean(midpoint_v_density, 1e-6), 0.5, max_relative = 1e-5);
    // heavier friction pulls both toward the end of the step
    assert!(midpoint_mean(midpoint_u_density, 5.0) > midpoint_mean(midpoint_u_density, 0.1));
    assert!(midpoint_mean(midpoint_v_density, 5.0) > midpoint_mean(midpoint_v_density, 0.1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn exact_kernel_preserves_the_stationary_law(
        eig in prop::collection::vec(0.1..10.0f64, 3),
        g in 0.1..5.0f64,
        t in 0.01..3.0f64,
    ) {
        let pot = Potential::make_gaussian(&eig).unwrap();
        let pi = GaussianMoments::stationary(&pot).unwrap();
        let out = ExactGaussianKernel::new(&pot.quadratic_hessian().unwrap(), g, t).unwrap().propagate(&pi);
        prop_assert!((&out.cov - &pi.cov).amax() <= 1e-9 * pi.cov.amax());
        prop_assert!(out.mean.amax() <= 1e-12);
    }
}
