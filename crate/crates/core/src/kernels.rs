//! Markov kernels for underdamped Langevin dynamics
//! `dX = P dt`, `dP = -∇V(X) dt - γP dt + sqrt(2γ) dB`:
//! exponential Euler (ULMC), the randomized midpoint variant (RM-ULMC), the
//! exact Gaussian transition for quadratic targets, a fine-step reference, and
//! a chain runner.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, one_minus_exp, psd_cholesky, psi, symmetrize};
use crate::noise::{build_noise_cov, draw_joint_noise, JointNoiseDraw, PairNoise};
use crate::path::{step_grid, BrownianPath, PathBasis};
use crate::potentials::{GradCounter, Gradient, Potential};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub x: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhaseState {
    pub fn new(x: DVector<f64>, p: DVector<f64>) -> Result<Self> {
        if x.len() != p.len() {
            return Err(Error::InvalidArgument(format!("dim(x) = {} but dim(p) = {}", x.len(), p.len())));
        }
        Ok(Self { x, p })
    }
    pub fn zeros(dim: usize) -> Self {
        Self { x: DVector::zeros(dim), p: DVector::zeros(dim) }
    }
    pub fn dim(&self) -> usize {
        self.x.len()
    }
    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.p.iter()).all(|v| v.is_finite())
    }
    /// Stacked `(x; p)`.
    pub fn stacked(&self) -> DVector<f64> {
        let d = self.dim();
        DVector::from_fn(2 * d, |i, _| if i < d { self.x[i] } else { self.p[i - d] })
    }
    pub fn from_stacked(z: &DVector<f64>) -> Self {
        let d = z.len() / 2;
        Self { x: z.rows(0, d).into_owned(), p: z.rows(d, d).into_owned() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    Ulmc,
    RmUlmc,
    ExactGaussian,
    Reference { substeps: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LastStep {
    Same,
    Ulmc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainConfig {
    pub gamma: f64,
    pub h: f64,
    pub n_steps: usize,
    pub last_step: LastStep,
    pub seed: u64,
    pub kernel: KernelKind,
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.h > 0.0) {
            return Err(Error::InvalidArgument(format!("need gamma > 0 and h > 0, got {} and {}", self.gamma, self.h)));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        if let KernelKind::Reference { substeps: 0 } = self.kernel {
            return Err(Error::InvalidArgument("reference kernel needs at least one substep".into()));
        }
        Ok(())
    }
}

/// Law `N(mean, cov)` on phase space, ordered `(x; p)`.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Matrix(format!("mean has length {n} but cov is {}x{}", cov.nrows(), cov.ncols())));
        }
        let scale = cov.abs().max().max(1e-300);
        for i in 0..n {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Matrix("covariance is not symmetric".into()));
                }
            }
        }
        let min_eig = cov.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * scale.max(1.0) {
            return Err(Error::Matrix(format!("covariance has eigenvalue {min_eig}")));
        }
        Ok(Self { mean, cov })
    }

    /// `π ⊗ N(0, I)` for a strictly convex quadratic: `N(0, blockdiag(H⁻¹, I))`.
    pub fn stationary(pot: &Potential) -> Result<Self> {
        let h = pot
            .quadratic_hessian()
            .ok_or_else(|| Error::InvalidArgument("stationary Gaussian law needs a quadratic target".into()))?;
        if !(pot.alpha() > 0.0) {
            return Err(Error::InvalidArgument("stationary law needs a positive definite Hessian".into()));
        }
        let d = pot.dim();
        let hinv = h.try_inverse().ok_or_else(|| Error::Matrix("Hessian is singular".into()))?;
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        cov.view_mut((0, 0), (d, d)).copy_from(&hinv);
        cov.view_mut((d, d), (d, d)).fill_with_identity();
        symmetrize(&mut cov);
        Ok(Self { mean: DVector::zeros(2 * d), cov })
    }

    pub fn point(s: &PhaseState) -> Self {
        let n = 2 * s.dim();
        Self { mean: s.stacked(), cov: DMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn sampler(&self) -> Result<GaussianSampler> {
        Ok(GaussianSampler { mean: self.mean.clone(), chol: psd_cholesky(&self.cov)? })
    }
}

#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        PhaseState::from_stacked(&(&self.mean + &self.chol * z))
    }
}

/// Initial law of a chain or of an error measurement.
#[derive(Clone, Debug)]
pub enum InitLaw {
    Point(PhaseState),
    Gaussian(GaussianMoments),
    /// Uniform resampling from a fixed pool of states.
    Empirical(Vec<PhaseState>),
}

impl InitLaw {
    pub fn sampler(&self) -> Result<InitSampler<'_>> {
        Ok(match self {
            InitLaw::Point(s) => InitSampler::Point(s),
            InitLaw::Gaussian(m) => InitSampler::Gaussian(m.sampler()?),
            InitLaw::Empirical(v) => {
                if v.is_empty() {
                    return Err(Error::InvalidArgument("empirical initial law has no states".into()));
                }
                InitSampler::Empirical(v)
            }
        })
    }
    pub fn dim(&self) -> usize {
        match self {
            InitLaw::Point(s) => s.dim(),
            InitLaw::Gaussian(m) => m.dim(),
            InitLaw::Empirical(v) => v.first().map_or(0, |s| s.dim()),
        }
    }
}

pub enum InitSampler<'a> {
    Point(&'a PhaseState),
    Gaussian(GaussianSampler),
    Empirical(&'a [PhaseState]),
}

impl InitSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PhaseState {
        match self {
            InitSampler::Point(s) => (*s).clone(),
            InitSampler::Gaussian(g) => g.sample(rng),
            InitSampler::Empirical(v) => v[rng.gen_range(0..v.len())].clone(),
        }
    }
}

/// Scalar coefficients of the exponential Euler step of length `h`.
#[derive(Clone, Copy, Debug)]
pub struct UlmcCoeffs {
    /// `e^{-γh}`
    pub decay: f64,
    /// `(1 - e^{-γh}) / γ`
    pub a1: f64,
    /// `(h - (1 - e^{-γh})/γ) / γ`
    pub a2: f64,
}

impl UlmcCoeffs {
    pub fn new(gamma: f64, h: f64) -> Self {
        let x = gamma * h;
        Self { decay: (-x).exp(), a1: one_minus_exp(x) / gamma, a2: psi(x) / (gamma * gamma) }
    }
}

/// Deterministic part of one exponential Euler step, given its noise.
pub fn ulmc_update<G: Gradient + ?Sized>(
    pot: &G,
    s: &PhaseState,
    c: &UlmcCoeffs,
    xi1: &DVector<f64>,
    xi2: &DVector<f64>,
) -> PhaseState {
    let g = pot.grad(&s.x);
    PhaseState {
        x: &s.x + c.a1 * &s.p - c.a2 * &g + xi1,
        p: c.decay * &s.p - c.a1 * &g + xi2,
    }
}

pub fn ulmc_step<G: Gradient + ?Sized, R: Rng + ?Sized>(
    pot: &G,
    s: &PhaseState,
    gamma: f64,
    h: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    let noise = PairNoise::new(gamma, h)?;
    let (xi1, xi2) = noise.draw(s.dim(), rng);
    Ok(ulmc_update(pot, s, &UlmcCoeffs::new(gamma, h), &xi1, &xi2))
}

/// Density of the `u` midpoint on `[0, 1]`.
pub fn midpoint_u_density(gamma: f64, h: f64, u: f64) -> f64 {
    let x = gamma * h;
    x * one_minus_exp(x * (1.0 - u)) / psi(x)
}

/// CDF of the `u` midpoint: `(ψ(x) - ψ(x(1-w))) / ψ(x)` with `x = γh`,
/// `ψ(y) = y - 1 + e^{-y}`.
pub fn midpoint_u_cdf(gamma: f64, h: f64, w: f64) -> f64 {
    let x = gamma * h;
    let w = w.clamp(0.0, 1.0);
    ((psi(x) - psi(x * (1.0 - w))) / psi(x)).clamp(0.0, 1.0)
}

/// Inverse of `midpoint_u_cdf` by safeguarded Newton iteration.
pub fn midpoint_u_quantile(gamma: f64, h: f64, q: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut w = q.clamp(0.0, 1.0);
    for _ in 0..100 {
        let f = midpoint_u_cdf(gamma, h, w) - q;
        if f.abs() <= 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = w;
        } else {
            lo = w;
        }
        let dens = midpoint_u_density(gamma, h, w);
        let mut next = w - f / dens;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 1e-12 * 1e-3 || hi - lo <= 1e-12 {
            w = next;
            break;
        }
        w = next;
    }
    w.clamp(0.0, 1.0)
}

pub fn sample_midpoint_u<R: Rng + ?Sized>(gamma: f64, h: f64, rng: &mut R) -> f64 {
    midpoint_u_quantile(gamma, h, rng.gen::<f64>())
}

pub fn midpoint_v_density(gamma: f64, h: f64, v: f64) -> f64 {
    let x = gamma * h;
    x * (-x * (1.0 - v)).exp() / one_minus_exp(x)
}

pub fn midpoint_v_cdf(gamma: f64, h: f64, w: f64) -> f64 {
    let x = gamma * h;
    let w = w.clamp(0.0, 1.0);
    // (e^{-x(1-w)} - e^{-x}) / (1 - e^{-x})
    ((-x).exp() * (x * w).exp_m1() / one_minus_exp(x)).clamp(0.0, 1.0)
}

/// `v = 1 + log(e^{-x} + q(1 - e^{-x})) / x`, evaluated through `ln_1p`.
pub fn midpoint_v_quantile(gamma: f64, h: f64, q: f64) -> f64 {
    let x = gamma * h;
    (1.0 + (-(one_minus_exp(x) * (1.0 - q))).ln_1p() / x).clamp(0.0, 1.0)
}

pub fn sample_midpoint_v<R: Rng + ?Sized>(gamma: f64, h: f64, rng: &mut R) -> f64 {
    midpoint_v_quantile(gamma, h, rng.gen::<f64>())
}

/// Deterministic part of one randomized-midpoint step given the midpoint
/// fractions and the joint noise `(ξ1_{uh}, ξ1_{vh}, ξ1_h, ξ2_h)`.
#[allow(clippy::too_many_arguments)]
pub fn rm_ulmc_update<G: Gradient + ?Sized>(
    pot: &G,
    s: &PhaseState,
    gamma: f64,
    h: f64,
    u: f64,
    v: f64,
    noise: &JointNoiseDraw,
) -> PhaseState {
    let g = pot.grad(&s.x);
    let cu = UlmcCoeffs::new(gamma, u * h);
    let cv = UlmcCoeffs::new(gamma, v * h);
    let ch = UlmcCoeffs::new(gamma, h);
    let x_u = &s.x + cu.a1 * &s.p - cu.a2 * &g + &noise.xi1_t1;
    let x_v = &s.x + cv.a1 * &s.p - cv.a2 * &g + &noise.xi1_t2;
    let g_u = pot.grad(&x_u);
    let g_v = pot.grad(&x_v);
    PhaseState {
        x: &s.x + ch.a1 * &s.p - ch.a2 * &g_u + &noise.xi1_h,
        p: ch.decay * &s.p - ch.a1 * &g_v + &noise.xi2_h,
    }
}

pub fn rm_ulmc_step<G: Gradient + ?Sized, R: Rng + ?Sized>(
    pot: &G,
    s: &PhaseState,
    gamma: f64,
    h: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    let u = sample_midpoint_u(gamma, h, rng);
    let v = sample_midpoint_v(gamma, h, rng);
    let nc = build_noise_cov(gamma, h, u * h, v * h)?;
    let noise = draw_joint_noise(&nc, s.dim(), rng);
    Ok(rm_ulmc_update(pot, s, gamma, h, u, v, &noise))
}

/// Exact transition of the linear dynamics for a quadratic target over time `t`:
/// `z' = Φ z + N(0, Q)` with `Φ = e^{At}`, `A = [[0, I], [-H, -γI]]`.
#[derive(Clone, Debug)]
pub struct ExactGaussianKernel {
    pub phi: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl ExactGaussianKernel {
    pub fn new(h: &DMatrix<f64>, gamma: f64, t: f64) -> Result<Self> {
        let d = h.nrows();
        let n = 2 * d;
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, d), (d, d)).fill_with_identity();
        a.view_mut((d, 0), (d, d)).copy_from(&(-h));
        for i in 0..d {
            a[(d + i, d + i)] = -gamma;
        }
        // Van Loan: exp([[-A, Σ], [0, Aᵀ]] t) = [[·, F12], [0, F22]],
        // e^{At} = F22ᵀ, Q = F22ᵀ F12.
        let mut big = DMatrix::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&(-&a * t));
        for i in 0..d {
            big[(d + i, n + d + i)] = 2.0 * gamma * t;
        }
        big.view_mut((n, n), (n, n)).copy_from(&(a.transpose() * t));
        let e = expm(&big)?;
        let f12 = e.view((0, n), (n, n)).into_owned();
        let phi = e.view((n, n), (n, n)).transpose();
        let mut cov = &phi * f12;
        symmetrize(&mut cov);
        let chol = psd_cholesky(&cov)?;
        Ok(Self { phi, cov, chol })
    }

    pub fn propagate(&self, m: &GaussianMoments) -> GaussianMoments {
        let mut cov = &self.phi * &m.cov * self.phi.transpose() + &self.cov;
        symmetrize(&mut cov);
        GaussianMoments { mean: &self.phi * &m.mean, cov }
    }

    pub fn step<R: Rng + ?Sized>(&self, s: &PhaseState, rng: &mut R) -> PhaseState {
        let z = DVector::from_fn(self.phi.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        PhaseState::from_stacked(&(&self.phi * s.stacked() + &self.chol * z))
    }
}

pub fn exact_gaussian_step<R: Rng + ?Sized>(
    h: &DMatrix<f64>,
    s: &PhaseState,
    gamma: f64,
    t: f64,
    rng: &mut R,
) -> Result<PhaseState> {
    Ok(ExactGaussianKernel::new(h, gamma, t)?.step(s, rng))
}

/// Exponential Euler substeps over every interval of a shared path.
pub fn reference_step<G: Gradient + ?Sized>(pot: &G, s: &PhaseState, path: &BrownianPath<'_>) -> PhaseState {
    let gamma = path.basis().gamma();
    let times = path.times();
    let mut cur = s.clone();
    for j in 0..path.n_intervals() {
        let c = UlmcCoeffs::new(gamma, times[j + 1] - times[j]);
        let (xi1, xi2) = path.interval_xi(j);
        cur = ulmc_update(pot, &cur, &c, &xi1, &xi2);
    }
    cur
}

/// `K` substeps of size `h/K` on a freshly sampled path.
pub fn reference_step_sampled<G: Gradient + ?Sized, R: Rng + ?Sized>(
    pot: &G,
    s: &PhaseState,
    gamma: f64,
    h: f64,
    k: usize,
    rng: &mut R,
) -> Result<PhaseState> {
    if k == 0 {
        return Err(Error::InvalidArgument("reference needs at least one substep".into()));
    }
    let basis = PathBasis::generic(gamma, s.dim());
    let path = basis.sample(step_grid(h, k, &[]), rng)?;
    Ok(reference_step(pot, s, &path))
}

#[derive(Clone, Debug, Serialize)]
pub struct ChainRecord {
    pub step: usize,
    pub mean_x_norm: f64,
    pub cov_trace_x: f64,
    pub cov_trace_p: f64,
    pub grad_evals: u64,
}

#[derive(Clone, Debug)]
pub struct ChainSummary {
    pub final_state: PhaseState,
    pub grad_evals: u64,
    pub records: Vec<ChainRecord>,
    pub dumps: Vec<(usize, PhaseState)>,
    pub warnings: Vec<String>,
}

/// Welford accumulator for running state moments along a chain.
struct Running {
    n: f64,
    mean_x: DVector<f64>,
    m2_x: DVector<f64>,
    mean_p: DVector<f64>,
    m2_p: DVector<f64>,
}

impl Running {
    fn new(d: usize) -> Self {
        Self { n: 0.0, mean_x: DVector::zeros(d), m2_x: DVector::zeros(d), mean_p: DVector::zeros(d), m2_p: DVector::zeros(d) }
    }
    fn push(&mut self, s: &PhaseState) {
        self.n += 1.0;
        let dx = &s.x - &self.mean_x;
        self.mean_x += &dx / self.n;
        self.m2_x += dx.component_mul(&(&s.x - &self.mean_x));
        let dp = &s.p - &self.mean_p;
        self.mean_p += &dp / self.n;
        self.m2_p += dp.component_mul(&(&s.p - &self.mean_p));
    }
    fn record(&self, step: usize, grad_evals: u64) -> ChainRecord {
        let denom = (self.n - 1.0).max(1.0);
        ChainRecord {
            step,
            mean_x_norm: self.mean_x.norm(),
            cov_trace_x: self.m2_x.sum() / denom,
            cov_trace_p: self.m2_p.sum() / denom,
            grad_evals,
        }
    }
}

enum StepKernel {
    Ulmc(PairNoise, UlmcCoeffs),
    RmUlmc,
    Exact(ExactGaussianKernel),
    Reference(usize),
}

impl StepKernel {
    fn new(kind: KernelKind, pot: &Potential, gamma: f64, h: f64) -> Result<Self> {
        Ok(match kind {
            KernelKind::Ulmc => StepKernel::Ulmc(PairNoise::new(gamma, h)?, UlmcCoeffs::new(gamma, h)),
            KernelKind::RmUlmc => StepKernel::RmUlmc,
            KernelKind::ExactGaussian => {
                let hess = pot
                    .quadratic_hessian()
                    .ok_or_else(|| Error::InvalidArgument("exact Gaussian kernel needs a quadratic target".into()))?;
                StepKernel::Exact(ExactGaussianKernel::new(&hess, gamma, h)?)
            }
            KernelKind::Reference { substeps } => StepKernel::Reference(substeps),
        })
    }

    fn step<G: Gradient + ?Sized, R: Rng + ?Sized>(&self, pot: &G, s: &PhaseState, gamma: f64, h: f64, rng: &mut R) -> Result<PhaseState> {
        match self {
            StepKernel::Ulmc(noise, c) => {
                let (xi1, xi2) = noise.draw(s.dim(), rng);
                Ok(ulmc_update(pot, s, c, &xi1, &xi2))
            }
            StepKernel::RmUlmc => rm_ulmc_step(pot, s, gamma, h, rng),
            StepKernel::Exact(k) => Ok(k.step(s, rng)),
            StepKernel::Reference(k) => reference_step_sampled(pot, s, gamma, h, *k, rng),
        }
    }
}

/// Runs `n_steps - 1` steps of `cfg.kernel` and a final step of the
/// `last_step` kernel. Moments are recorded every `thin` steps (and at the
/// end); states are dumped at the same steps when `dump` is set.
pub fn run_chain<R: Rng + ?Sized>(
    pot: &Potential,
    init: &InitLaw,
    cfg: &ChainConfig,
    thin: usize,
    dump: bool,
    rng: &mut R,
) -> Result<ChainSummary> {
    cfg.validate()?;
    if init.dim() != pot.dim() {
        return Err(Error::InvalidArgument(format!("init has dim {} but target has dim {}", init.dim(), pot.dim())));
    }
    let mut warnings = Vec::new();
    if cfg.gamma * cfg.h > 1.0 {
        warnings.push(format!("gamma*h = {:.3} > 1; outside the regime h <~ 1/gamma", cfg.gamma * cfg.h));
    }
    let counter = GradCounter::new(pot);
    let main = StepKernel::new(cfg.kernel, pot, cfg.gamma, cfg.h)?;
    let last = match cfg.last_step {
        LastStep::Same => None,
        LastStep::Ulmc => Some(StepKernel::new(KernelKind::Ulmc, pot, cfg.gamma, cfg.h)?),
    };
    let thin = thin.max(1);
    let mut state = init.sampler()?.sample(rng);
    let mut running = Running::new(pot.dim());
    let mut records = Vec::new();
    let mut dumps = Vec::new();
    for step in 1..=cfg.n_steps {
        let kernel = match (&last, step == cfg.n_steps) {
            (Some(k), true) => k,
            _ => &main,
        };
        state = kernel.step(&counter, &state, cfg.gamma, cfg.h, rng)?;
        if !state.is_finite() {
            return Err(Error::Divergence { step });
        }
        running.push(&state);
        if step % thin == 0 || step == cfg.n_steps {
            records.push(running.record(step, counter.count()));
            if dump {
                dumps.push((step, state.clone()));
            }
        }
    }
    Ok(ChainSummary { final_state: state, grad_evals: counter.count(), records, dumps, warnings })
}

/// Independent replicas, replica `r` drawing from stream `(cfg.seed, "chain", r)`.
pub fn run_replicas(
    pot: &Potential,
    init: &InitLaw,
    cfg: &ChainConfig,
    n_replicas: usize,
    thin: usize,
    dump: bool,
) -> Result<Vec<ChainSummary>> {
    crate::par::try_map_indexed(n_replicas, |r| {
        let mut rng = rng::stream(cfg.seed, "chain", r as u64);
        run_chain(pot, init, cfg, thin, dump, &mut rng)
    })
}
