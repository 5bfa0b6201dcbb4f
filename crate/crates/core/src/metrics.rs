//! Exact laws of linear chains, one-step error measurement on shared
//! Brownian paths, Gaussian-proxy divergences and exponent fits.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::gaussian_w2;
use crate::error::{Error, Result};
use crate::kernels::{
    midpoint_u_density, midpoint_u_quantile, midpoint_v_density, midpoint_v_quantile, reference_step, rm_ulmc_update, ulmc_update, GaussianMoments, InitLaw,
    KernelKind, PhaseState, UlmcCoeffs,
};
use crate::linalg::{gauss_legendre_16, integrate_gk, symmetrize};
use crate::noise::{cov_xi1_xi1, cov_xi1_xi2, var_xi2, JointNoiseDraw, PairNoise};
use crate::par::{mean, pairwise_sum, try_map_indexed};
use crate::path::{step_grid, BrownianPath, PathBasis};
use crate::potentials::{Gradient, Potential};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorFit {
    pub hs: Vec<f64>,
    pub errors: Vec<f64>,
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ErrorFit {
    /// Below this the log-log points are not on a line worth reading.
    pub const MIN_R_SQUARED: f64 = 0.9;

    pub fn is_reliable(&self) -> bool {
        self.r_squared >= Self::MIN_R_SQUARED
    }
}

/// Least squares slope of `log(error)` against `log(h)`.
pub fn fit_exponent(hs: &[f64], errors: &[f64]) -> Result<ErrorFit> {
    if hs.len() != errors.len() {
        return Err(Error::InvalidArgument(format!("{} step sizes but {} errors", hs.len(), errors.len())));
    }
    if hs.len() < 4 {
        return Err(Error::InsufficientData(format!("exponent fit needs at least 4 points, got {}", hs.len())));
    }
    if hs.windows(2).any(|w| !(w[0] >= 1.5 * w[1])) || !(hs[hs.len() - 1] > 0.0) {
        return Err(Error::InvalidArgument("step sizes must decrease by a factor of at least 1.5".into()));
    }
    if errors.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::InvalidArgument("errors must be positive and finite".into()));
    }
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(ErrorFit { hs: hs.to_vec(), errors: errors.to_vec(), exponent, intercept, r_squared })
}

/// Affine map `z' = F z + ξ`, `ξ ~ N(0, Q)`, of one ULMC step on the
/// quadratic `V(x) = xᵀHx/2`.
pub fn ulmc_linear_map(hess: &DMatrix<f64>, gamma: f64, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = hess.nrows();
    let c = UlmcCoeffs::new(gamma, h);
    let id = DMatrix::<f64>::identity(d, d);
    let mut f = DMatrix::zeros(2 * d, 2 * d);
    f.view_mut((0, 0), (d, d)).copy_from(&(&id - c.a2 * hess));
    f.view_mut((0, d), (d, d)).copy_from(&(c.a1 * &id));
    f.view_mut((d, 0), (d, d)).copy_from(&(-c.a1 * hess));
    f.view_mut((d, d), (d, d)).copy_from(&(c.decay * &id));
    let pair = PairNoise::new(gamma, h)?.cov;
    let q = pair.kronecker(&id);
    Ok((f, q))
}

/// Exact law of the ULMC iterate after `n` steps on a quadratic target.
pub fn ulmc_exact_law(hess: &DMatrix<f64>, gamma: f64, h: f64, n: usize, init: &GaussianMoments) -> Result<GaussianMoments> {
    if init.dim() != hess.nrows() {
        return Err(Error::InvalidArgument("initial law and Hessian dimensions differ".into()));
    }
    let (f, q) = ulmc_linear_map(hess, gamma, h)?;
    let mut mean = init.mean.clone();
    let mut cov = init.cov.clone();
    for _ in 0..n {
        mean = &f * mean;
        cov = &f * cov * f.transpose() + &q;
        symmetrize(&mut cov);
    }
    Ok(GaussianMoments { mean, cov })
}

/// Stationary law of ULMC on a quadratic target, by doubling
/// `S ← S + F S Fᵀ`, `F ← F²` until `F` vanishes.
pub fn ulmc_stationary_law(hess: &DMatrix<f64>, gamma: f64, h: f64) -> Result<GaussianMoments> {
    let (mut f, mut s) = ulmc_linear_map(hess, gamma, h)?;
    for _ in 0..64 {
        let rho = f.abs().max();
        s = &s + &f * &s * f.transpose();
        symmetrize(&mut s);
        f = &f * &f;
        if rho < 1e-300 || f.abs().max() < 1e-18 {
            let n = s.nrows();
            return Ok(GaussianMoments { mean: DVector::zeros(n), cov: s });
        }
        if !f.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::NumericalDegeneracy("ULMC linear map is not contractive at this step size".into()))
}

/// Exact first and second moments of one randomized-midpoint step on the
/// quadratic `V(x) = xᵀHx/2`. The step is affine in the state with random
/// coefficients, so moments propagate exactly, but the iterate law is a
/// Gaussian mixture rather than a Gaussian.
#[derive(Clone, Debug)]
pub struct RmMomentMap {
    mean_map: DMatrix<f64>,
    rows_x: [DMatrix<f64>; 3],
    rows_p: [DMatrix<f64>; 3],
    mom_u: [[f64; 3]; 3],
    mom_v: [[f64; 3]; 3],
    noise: DMatrix<f64>,
}

/// `E[f_i f_j]` for `f = (1, a2(wh), a1(wh))` under the midpoint density.
fn coeff_moments(gamma: f64, h: f64, density: fn(f64, f64, f64) -> f64) -> Result<[[f64; 3]; 3]> {
    let f = |w: f64| {
        let c = UlmcCoeffs::new(gamma, w * h);
        [1.0, c.a2, c.a1]
    };
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = integrate_gk(|w| density(gamma, h, w) * f(w)[i] * f(w)[j], 0.0, 1.0, 1e-12)?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

fn expect<F: Fn(f64) -> Result<f64>>(gamma: f64, h: f64, density: fn(f64, f64, f64) -> f64, f: F) -> Result<f64> {
    let failed = std::cell::Cell::new(None);
    let v = integrate_gk(
        |w| match f(w) {
            Ok(y) => density(gamma, h, w) * y,
            Err(e) => {
                failed.set(Some(e));
                0.0
            }
        },
        0.0,
        1.0,
        1e-12,
    )?;
    match failed.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

impl RmMomentMap {
    pub fn new(hess: &DMatrix<f64>, gamma: f64, h: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("need gamma > 0 and h > 0, got {gamma} and {h}")));
        }
        let d = hess.nrows();
        let id = DMatrix::<f64>::identity(d, d);
        let h2 = hess * hess;
        let c = UlmcCoeffs::new(gamma, h);
        let zero = DMatrix::<f64>::zeros(d, d);
        let block = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(a);
            m.view_mut((0, d), (d, d)).copy_from(b);
            m
        };
        // x' = [I - a2 H + a2 a2(u) H², a1 I - a2 a1(u) H] z + noise
        // p' = [-a1 H + a1 a2(v) H², e I - a1 a1(v) H] z + noise
        let rows_x = [
            block(&(&id - c.a2 * hess), &(c.a1 * &id)),
            block(&(c.a2 * &h2), &zero),
            block(&zero, &(-c.a2 * hess)),
        ];
        let rows_p = [
            block(&(-c.a1 * hess), &(c.decay * &id)),
            block(&(c.a1 * &h2), &zero),
            block(&zero, &(-c.a1 * hess)),
        ];
        let mom_u = coeff_moments(gamma, h, midpoint_u_density)?;
        let mom_v = coeff_moments(gamma, h, midpoint_v_density)?;
        let mean_x = &rows_x[0] + mom_u[0][1] * &rows_x[1] + mom_u[0][2] * &rows_x[2];
        let mean_p = &rows_p[0] + mom_v[0][1] * &rows_p[1] + mom_v[0][2] * &rows_p[2];
        let mut mean_map = DMatrix::zeros(2 * d, 2 * d);
        mean_map.view_mut((0, 0), (d, 2 * d)).copy_from(&mean_x);
        mean_map.view_mut((d, 0), (d, 2 * d)).copy_from(&mean_p);

        // noise: n_x = ξ1_h - a2 H ξ1_u, n_p = ξ2_h - a1 H ξ1_v
        let s_uu = expect(gamma, h, midpoint_u_density, |u| cov_xi1_xi1(gamma, u * h, u * h))?;
        let s_uh = expect(gamma, h, midpoint_u_density, |u| cov_xi1_xi1(gamma, u * h, h))?;
        let s_hh = cov_xi1_xi1(gamma, h, h)?;
        let s_vv = expect(gamma, h, midpoint_v_density, |v| cov_xi1_xi1(gamma, v * h, v * h))?;
        let s_v2 = expect(gamma, h, midpoint_v_density, |v| cov_xi1_xi2(gamma, v * h, h))?;
        let s_22 = var_xi2(gamma, h);
        let s_u2 = expect(gamma, h, midpoint_u_density, |u| cov_xi1_xi2(gamma, u * h, h))?;
        let s_hv = expect(gamma, h, midpoint_v_density, |v| cov_xi1_xi1(gamma, v * h, h))?;
        let s_h2 = cov_xi1_xi2(gamma, h, h)?;
        // E cov(ξ1_{uh}, ξ1_{vh}) over independent u, v; split at the kink u = v
        let s_uv = expect(gamma, h, midpoint_u_density, |u| {
            let below = expect_on(gamma, h, midpoint_v_density, 0.0, u, |v| cov_xi1_xi1(gamma, v * h, u * h))?;
            let above = expect_on(gamma, h, midpoint_v_density, u, 1.0, |v| cov_xi1_xi1(gamma, u * h, v * h))?;
            Ok(below + above)
        })?;
        let nxx = c.a2 * c.a2 * s_uu * &h2 - 2.0 * c.a2 * s_uh * hess + s_hh * &id;
        let npp = c.a1 * c.a1 * s_vv * &h2 - 2.0 * c.a1 * s_v2 * hess + s_22 * &id;
        let nxp = c.a1 * c.a2 * s_uv * &h2 - (c.a2 * s_u2 + c.a1 * s_hv) * hess + s_h2 * &id;
        let mut noise = DMatrix::zeros(2 * d, 2 * d);
        noise.view_mut((0, 0), (d, d)).copy_from(&nxx);
        noise.view_mut((d, d), (d, d)).copy_from(&npp);
        noise.view_mut((0, d), (d, d)).copy_from(&nxp);
        noise.view_mut((d, 0), (d, d)).copy_from(&nxp.transpose());
        symmetrize(&mut noise);
        Ok(Self { mean_map, rows_x, rows_p, mom_u, mom_v, noise })
    }

    pub fn mean_map(&self) -> &DMatrix<f64> {
        &self.mean_map
    }

    pub fn propagate(&self, m: &GaussianMoments) -> GaussianMoments {
        let d = m.dim();
        let mean = &self.mean_map * &m.mean;
        // E[z zᵀ] propagates through the random rows; the mean part is
        // subtracted afterwards.
        let second = &m.cov + &m.mean * m.mean.transpose();
        let quad = |rows: &[DMatrix<f64>; 3], mom: &[[f64; 3]; 3]| {
            let mut acc = DMatrix::zeros(d, d);
            for i in 0..3 {
                let left = &rows[i] * &second;
                for j in 0..3 {
                    acc += mom[i][j] * &left * rows[j].transpose();
                }
            }
            acc
        };
        let xx = quad(&self.rows_x, &self.mom_u);
        let pp = quad(&self.rows_p, &self.mom_v);
        let xp = self.mean_map.rows(0, d) * &second * self.mean_map.rows(d, d).transpose();
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        cov.view_mut((0, 0), (d, d)).copy_from(&xx);
        cov.view_mut((d, d), (d, d)).copy_from(&pp);
        cov.view_mut((0, d), (d, d)).copy_from(&xp);
        cov.view_mut((d, 0), (d, d)).copy_from(&xp.transpose());
        cov += &self.noise;
        cov -= &mean * mean.transpose();
        symmetrize(&mut cov);
        GaussianMoments { mean, cov }
    }
}

fn expect_on<F: Fn(f64) -> Result<f64>>(
    gamma: f64,
    h: f64,
    density: fn(f64, f64, f64) -> f64,
    a: f64,
    b: f64,
    f: F,
) -> Result<f64> {
    if b - a <= 0.0 {
        return Ok(0.0);
    }
    let (nodes, weights) = gauss_legendre_16();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    nodes.iter().zip(weights).try_fold(0.0, |acc, (z, w)| {
        let t = mid + half * z;
        Ok(acc + half * w * density(gamma, h, t) * f(t)?)
    })
}

/// Mean and covariance of `n` RM-ULMC steps on a quadratic target, the last
/// one replaced by an exponential Euler step when `last_ulmc` is set.
pub fn rm_ulmc_moment_law(
    hess: &DMatrix<f64>,
    gamma: f64,
    h: f64,
    n: usize,
    last_ulmc: bool,
    init: &GaussianMoments,
) -> Result<GaussianMoments> {
    if init.dim() != hess.nrows() {
        return Err(Error::InvalidArgument("initial law and Hessian dimensions differ".into()));
    }
    let map = RmMomentMap::new(hess, gamma, h)?;
    let rm_steps = if last_ulmc { n.saturating_sub(1) } else { n };
    let mut m = init.clone();
    for _ in 0..rm_steps {
        m = map.propagate(&m);
    }
    if last_ulmc && n > 0 {
        m = ulmc_exact_law(hess, gamma, h, 1, &m)?;
    }
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// Exact flow driven by the path on quadratic targets, substeps otherwise.
    Auto,
    /// Always `K_ref` exponential Euler substeps on the shared path.
    Substeps,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalErrorConfig {
    pub kernel: KernelKind,
    pub gamma: f64,
    pub h: f64,
    pub k_ref: usize,
    pub n_paths: usize,
    /// Initial states; paths are split evenly between them. `0` picks
    /// `⌈√n_paths⌉`.
    pub n_inits: usize,
    /// Midpoint-time draws per path (randomized midpoint kernel only).
    pub n_resample: usize,
    pub seed: u64,
    pub reference: ReferenceMode,
    /// Also run the reference at `2 K_ref` and report the gap.
    pub richardson: bool,
}

impl LocalErrorConfig {
    pub fn new(kernel: KernelKind, gamma: f64, h: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            kernel,
            gamma,
            h,
            k_ref: 256,
            n_paths,
            n_inits: 0,
            n_resample: 64,
            seed,
            reference: ReferenceMode::Auto,
            richardson: false,
        }
    }

    fn inits(&self) -> usize {
        if self.n_inits == 0 {
            ((self.n_paths as f64).sqrt().ceil() as usize).max(2)
        } else {
            self.n_inits
        }
    }

    fn resamples(&self) -> usize {
        if self.kernel == KernelKind::RmUlmc {
            self.n_resample
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.h > 0.0) {
            return Err(Error::InvalidArgument(format!("need gamma, h > 0, got {}, {}", self.gamma, self.h)));
        }
        if self.k_ref < 64 {
            return Err(Error::InvalidArgument(format!("K_ref = {} is below 64", self.k_ref)));
        }
        if self.kernel == KernelKind::RmUlmc && self.n_resample < 32 {
            return Err(Error::InvalidArgument(format!("n_resample = {} is below 32", self.n_resample)));
        }
        let n_inits = self.inits();
        if n_inits < 2 || self.n_paths < 2 * n_inits {
            return Err(Error::InvalidArgument(format!(
                "{} paths over {n_inits} initial states leaves fewer than two paths each",
                self.n_paths
            )));
        }
        Ok(())
    }
}

/// One-step errors. Position errors are not divided by `h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalError {
    pub h: f64,
    pub pos_strong: f64,
    pub mom_strong: f64,
    pub pos_weak: f64,
    pub mom_weak: f64,
    pub pos_strong_se: f64,
    pub mom_strong_se: f64,
    pub pos_weak_se: f64,
    pub mom_weak_se: f64,
    /// RMS gap between the `K_ref` and `2 K_ref` references, per coordinate.
    pub richardson_gap: Option<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Per initial state: mean squared errors, the mean error vector and the
/// mean squared deviation from it (for debiasing `‖mean‖²`).
struct InitSummary {
    sq_pos: f64,
    sq_mom: f64,
    weak_pos: f64,
    weak_mom: f64,
    gap_pos: f64,
    gap_mom: f64,
}

fn on_grid(t: f64, h: f64, k: usize) -> bool {
    let j = t * k as f64 / h;
    (j - j.round()).abs() < 1e-7
}

/// Stratified midpoint fractions: each marginal hits every quantile stratum
/// once; pairing is a random permutation.
fn stratified_midpoints<R: Rng + ?Sized>(gamma: f64, h: f64, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let strata = |rng: &mut R| -> Vec<f64> { (0..n).map(|r| (r as f64 + rng.gen::<f64>()) / n as f64).collect() };
    let us: Vec<f64> = strata(rng).into_iter().map(|q| midpoint_u_quantile(gamma, h, q)).collect();
    let mut vs: Vec<f64> = strata(rng).into_iter().map(|q| midpoint_v_quantile(gamma, h, q)).collect();
    vs.shuffle(rng);
    us.into_iter().zip(vs).collect()
}

fn debiased_sq_norm(rows: &[DVector<f64>]) -> f64 {
    let m = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += r;
    }
    mean /= m;
    let dev: Vec<f64> = rows.iter().map(|r| (r - &mean).norm_squared()).collect();
    mean.norm_squared() - pairwise_sum(&dev) / (m * (m - 1.0))
}

struct Engine<'a> {
    pot: &'a Potential,
    cfg: &'a LocalErrorConfig,
    basis: PathBasis,
    exact_ref: bool,
    cv: Option<MidpointMeans>,
}

/// `E[a1(uh)], E[a2(uh)], E[a1(vh)], E[a2(vh)]` under the midpoint laws.
#[derive(Clone, Copy)]
struct MidpointMeans {
    a1_u: f64,
    a2_u: f64,
    a1_v: f64,
    a2_v: f64,
}

impl MidpointMeans {
    fn new(gamma: f64, h: f64) -> Result<Self> {
        let e = |dens: fn(f64, f64, f64) -> f64, pick: fn(&UlmcCoeffs) -> f64| {
            integrate_gk(|w| dens(gamma, h, w) * pick(&UlmcCoeffs::new(gamma, w * h)), 0.0, 1.0, 1e-13)
        };
        Ok(Self {
            a1_u: e(midpoint_u_density, |c| c.a1)?,
            a2_u: e(midpoint_u_density, |c| c.a2)?,
            a1_v: e(midpoint_v_density, |c| c.a1)?,
            a2_v: e(midpoint_v_density, |c| c.a2)?,
        })
    }
}

impl Engine<'_> {
    fn reference(&self, path: &BrownianPath<'_>, cum: &[nalgebra::Vector4<f64>], s0: &PhaseState, k: usize) -> Result<PhaseState> {
        if self.exact_ref {
            return path.exact_endpoint(cum, s0);
        }
        let h = self.cfg.h;
        Ok(reference_step(self.pot, s0, &path.coarsen(|t| on_grid(t, h, k))))
    }

    fn algorithm(
        &self,
        path: &BrownianPath<'_>,
        cum: &[nalgebra::Vector4<f64>],
        s0: &PhaseState,
        uv: (f64, f64),
    ) -> Result<PhaseState> {
        let (g, h) = (self.cfg.gamma, self.cfg.h);
        let last = path.n_intervals();
        Ok(match self.cfg.kernel {
            KernelKind::Ulmc => {
                let (xi1, xi2) = path.xi_at(cum, last);
                ulmc_update(self.pot, s0, &UlmcCoeffs::new(g, h), &xi1, &xi2)
            }
            KernelKind::RmUlmc => {
                let idx = |t: f64| {
                    path.index_of(t).ok_or_else(|| Error::NumericalDegeneracy(format!("midpoint {t} missing from path grid")))
                };
                let (xi1_h, xi2_h) = path.xi_at(cum, last);
                let noise = JointNoiseDraw {
                    xi1_t1: path.xi_at(cum, idx(uv.0 * h)?).0,
                    xi1_t2: path.xi_at(cum, idx(uv.1 * h)?).0,
                    xi1_h,
                    xi2_h,
                };
                rm_ulmc_update(self.pot, s0, g, h, uv.0, uv.1, &noise)
            }
            KernelKind::ExactGaussian => path.exact_endpoint(cum, s0)?,
            KernelKind::Reference { substeps } => reference_step(self.pot, s0, &path.coarsen(|t| on_grid(t, h, substeps))),
        })
    }

    fn run_init(&self, i: usize, sampler: &crate::kernels::InitSampler<'_>, paths: usize) -> Result<InitSummary> {
        let cfg = self.cfg;
        let mut rng = rng::stream(cfg.seed, "local-error", i as u64);
        let s0 = sampler.sample(&mut rng);
        let r = cfg.resamples();
        let mut grid_k = if self.exact_ref { 1 } else { cfg.k_ref * if cfg.richardson { 2 } else { 1 } };
        if let KernelKind::Reference { substeps } = cfg.kernel {
            grid_k = grid_k.max(1) * substeps;
        }
        let (mut sq_pos, mut sq_mom, mut gap_pos, mut gap_mom) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut d_pos, mut d_mom) = (Vec::with_capacity(paths), Vec::with_capacity(paths));
        // linearized midpoint gradients; their midpoint-law mean is exact
        let lin = self.cv.map(|m| {
            let g = self.pot.grad(&s0.x);
            let hp = self.pot.hessian_vec(&s0.x, &s0.p);
            let hg = self.pot.hessian_vec(&s0.x, &g);
            (m, hp, hg, UlmcCoeffs::new(cfg.gamma, cfg.h))
        });
        for _ in 0..paths {
            let uvs = if cfg.kernel == KernelKind::RmUlmc {
                stratified_midpoints(cfg.gamma, cfg.h, r, &mut rng)
            } else {
                vec![(1.0, 1.0)]
            };
            let extra: Vec<f64> = uvs.iter().flat_map(|&(u, v)| [u * cfg.h, v * cfg.h]).collect();
            let path = self.basis.sample(step_grid(cfg.h, grid_k, &extra), &mut rng)?;
            let cum = path.cumulative();
            let reference = if cfg.richardson && !self.exact_ref {
                let fine = self.reference(&path, &cum, &s0, 2 * cfg.k_ref)?;
                let coarse = self.reference(&path, &cum, &s0, cfg.k_ref)?;
                gap_pos.push((&fine.x - &coarse.x).norm_squared());
                gap_mom.push((&fine.p - &coarse.p).norm_squared());
                fine
            } else {
                self.reference(&path, &cum, &s0, cfg.k_ref)?
            };
            let mut mean_x = DVector::zeros(s0.dim());
            let mut mean_p = DVector::zeros(s0.dim());
            for &uv in &uvs {
                let alg = self.algorithm(&path, &cum, &s0, uv)?;
                let (ex, ep) = (&alg.x - &reference.x, &alg.p - &reference.p);
                sq_pos.push(ex.norm_squared());
                sq_mom.push(ep.norm_squared());
                mean_x += ex;
                mean_p += ep;
            }
            mean_x /= r as f64;
            mean_p /= r as f64;
            if let Some((m, hp, hg, ch)) = &lin {
                let (mut cx, mut cp) = (DVector::zeros(s0.dim()), DVector::zeros(s0.dim()));
                for &(u, v) in &uvs {
                    let (cu, cv) = (UlmcCoeffs::new(cfg.gamma, u * cfg.h), UlmcCoeffs::new(cfg.gamma, v * cfg.h));
                    cx += (cu.a1 - m.a1_u) * hp - (cu.a2 - m.a2_u) * hg;
                    cp += (cv.a1 - m.a1_v) * hp - (cv.a2 - m.a2_v) * hg;
                }
                mean_x += ch.a2 * cx / r as f64;
                mean_p += ch.a1 * cp / r as f64;
            }
            d_pos.push(mean_x);
            d_mom.push(mean_p);
        }
        let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { mean(v) };
        Ok(InitSummary {
            sq_pos: mean(&sq_pos),
            sq_mom: mean(&sq_mom),
            weak_pos: debiased_sq_norm(&d_pos),
            weak_mom: debiased_sq_norm(&d_mom),
            gap_pos: avg(&gap_pos),
            gap_mom: avg(&gap_mom),
        })
    }
}

/// `sqrt(mean(q))` with a jackknife standard error over the entries.
fn jackknife_sqrt(q: &[f64]) -> (f64, f64) {
    let n = q.len() as f64;
    let total = pairwise_sum(q);
    let est = (total / n).max(0.0).sqrt();
    let loo: Vec<f64> = q.iter().map(|qi| ((total - qi) / (n - 1.0)).max(0.0).sqrt()).collect();
    let m = mean(&loo);
    let var: Vec<f64> = loo.iter().map(|v| (v - m).powi(2)).collect();
    (est, ((n - 1.0) / n * pairwise_sum(&var)).sqrt())
}

/// Strong and weak one-step errors of `cfg.kernel` against the diffusion,
/// coupled through a shared Brownian path (and shared midpoint draws).
pub fn local_error(pot: &Potential, init: &InitLaw, cfg: &LocalErrorConfig) -> Result<LocalError> {
    cfg.validate()?;
    if init.dim() != pot.dim() {
        return Err(Error::InvalidArgument("initial law and target dimensions differ".into()));
    }
    let basis = PathBasis::for_potential(cfg.gamma, pot);
    let exact_ref = cfg.reference == ReferenceMode::Auto && basis.is_exact();
    if cfg.kernel == KernelKind::ExactGaussian && !basis.is_exact() {
        return Err(Error::InvalidArgument("exact Gaussian kernel needs a quadratic target".into()));
    }
    let cv = if cfg.kernel == KernelKind::RmUlmc { Some(MidpointMeans::new(cfg.gamma, cfg.h)?) } else { None };
    let engine = Engine { pot, cfg, basis, exact_ref, cv };
    let n_inits = cfg.inits();
    let per_init = cfg.n_paths / n_inits;
    let sampler = init.sampler()?;
    let parts = try_map_indexed(n_inits, |i| engine.run_init(i, &sampler, per_init))?;
    let col = |f: fn(&InitSummary) -> f64| parts.iter().map(f).collect::<Vec<f64>>();
    let (pos_strong, pos_strong_se) = jackknife_sqrt(&col(|s| s.sq_pos));
    let (mom_strong, mom_strong_se) = jackknife_sqrt(&col(|s| s.sq_mom));
    let (pos_weak, pos_weak_se) = jackknife_sqrt(&col(|s| s.weak_pos));
    let (mom_weak, mom_weak_se) = jackknife_sqrt(&col(|s| s.weak_mom));
    let mut warnings = Vec::new();
    for (name, est, se) in [("position", pos_weak, pos_weak_se), ("momentum", mom_weak, mom_weak_se)] {
        if se > 0.25 * est {
            warnings.push(format!("{name} weak error SE {se:.3e} exceeds 25% of {est:.3e}; increase n_paths"));
        }
    }
    let richardson_gap = (cfg.richardson && !exact_ref).then(|| {
        let gp = mean(&col(|s| s.gap_pos)).sqrt();
        let gm = mean(&col(|s| s.gap_mom)).sqrt();
        if gp > 0.1 * pos_strong || gm > 0.1 * mom_strong {
            warnings.push(format!("reference gap ({gp:.3e}, {gm:.3e}) exceeds 10% of the measured error"));
        }
        (gp, gm)
    });
    Ok(LocalError {
        h: cfg.h,
        pos_strong,
        mom_strong,
        pos_weak,
        mom_weak,
        pos_strong_se,
        mom_strong_se,
        pos_weak_se,
        mom_weak_se,
        richardson_gap,
        warnings,
    })
}

/// `(‖X̂ - X‖_{L²}, ‖P̂ - P‖_{L²})` after one step.
pub fn strong_error(pot: &Potential, init: &InitLaw, cfg: &LocalErrorConfig) -> Result<(f64, f64)> {
    let e = local_error(pot, init, cfg)?;
    Ok((e.pos_strong, e.mom_strong))
}

/// `(‖E[X̂ - X]‖, ‖E[P̂ - P]‖)` after one step, root-mean-square over the
/// initial law.
pub fn weak_error(pot: &Potential, init: &InitLaw, cfg: &LocalErrorConfig) -> Result<(f64, f64)> {
    let e = local_error(pot, init, cfg)?;
    Ok((e.pos_weak, e.mom_weak))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct W2Proxy {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
}

fn fitted_moments(samples: &[DVector<f64>], idx: impl Iterator<Item = usize> + Clone) -> (DVector<f64>, DMatrix<f64>) {
    let n = samples[0].len();
    let m = idx.clone().count() as f64;
    let mut mu = DVector::zeros(n);
    for i in idx.clone() {
        mu += &samples[i];
    }
    mu /= m;
    let mut cov = DMatrix::zeros(n, n);
    for i in idx {
        let c = &samples[i] - &mu;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= m - 1.0;
    symmetrize(&mut cov);
    (mu, cov)
}

/// Bures W2 between the moment-matched Gaussian of `samples` (stacked phase
/// states) and `target`, with a basic bootstrap 95% interval.
pub fn empirical_w2_gaussian_proxy(
    samples: &[PhaseState],
    target: &GaussianMoments,
    n_boot: usize,
    seed: u64,
) -> Result<W2Proxy> {
    let n = 2 * target.dim();
    let need = 10 * n * n;
    if samples.len() < need {
        return Err(Error::InsufficientData(format!("W2 proxy needs at least {need} samples, got {}", samples.len())));
    }
    if samples.iter().any(|s| 2 * s.dim() != n) {
        return Err(Error::InvalidArgument("sample and target dimensions differ".into()));
    }
    let z: Vec<DVector<f64>> = samples.iter().map(|s| s.stacked()).collect();
    let w2 = |mu: &DVector<f64>, cov: &DMatrix<f64>| {
        gaussian_w2(mu, cov, &target.mean, &target.cov).map_err(|e| match e {
            Error::Matrix(m) => Error::InsufficientData(format!("fitted covariance is degenerate: {m}")),
            other => other,
        })
    };
    let (mu, cov) = fitted_moments(&z, 0..z.len());
    let value = w2(&mu, &cov)?;
    let boots = try_map_indexed(n_boot, |b| {
        let mut rng = rng::stream(seed, "w2-bootstrap", b as u64);
        let idx: Vec<usize> = (0..z.len()).map(|_| rng.gen_range(0..z.len())).collect();
        let (m, c) = fitted_moments(&z, idx.into_iter());
        w2(&m, &c)
    })?;
    let (ci_low, ci_high) = if boots.is_empty() {
        (value, value)
    } else {
        let mut sorted = boots;
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
        // basic interval: reflects the bootstrap shift, which is large here
        // because the proxy is biased upward by sampling noise
        ((2.0 * value - q(0.975)).max(0.0), (2.0 * value - q(0.025)).max(0.0))
    };
    Ok(W2Proxy { value, ci_low, ci_high, n_samples: samples.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fit_recovers_exact_power() {
        let hs = [0.2, 0.1, 0.05, 0.025];
        let errs: Vec<f64> = hs.iter().map(|h| h * h).collect();
        let f = fit_exponent(&hs, &errs).unwrap();
        assert_relative_eq!(f.exponent, 2.0, max_relative = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fit_rejects_short_or_unordered_grids() {
        assert!(matches!(fit_exponent(&[0.1, 0.05, 0.025], &[1.0, 1.0, 1.0]), Err(Error::InsufficientData(_))));
        assert!(fit_exponent(&[0.1, 0.08, 0.02, 0.01], &[1.0; 4]).is_err());
    }

    #[test]
    fn zero_steps_return_the_initial_law() {
        let hess = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let init = GaussianMoments::new(DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]), DMatrix::identity(4, 4)).unwrap();
        let out = ulmc_exact_law(&hess, 1.5, 0.1, 0, &init).unwrap();
        assert_eq!(out.mean, init.mean);
        assert_eq!(out.cov, init.cov);
    }

    #[test]
    fn stationary_law_is_a_fixed_point() {
        let hess = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 10.0]));
        let pi = ulmc_stationary_law(&hess, 2.0, 0.1).unwrap();
        let next = ulmc_exact_law(&hess, 2.0, 0.1, 1, &pi).unwrap();
        assert!((next.cov - &pi.cov).abs().max() < 1e-12);
    }

    #[test]
    fn jackknife_of_constant_has_zero_se() {
        let (e, se) = jackknife_sqrt(&[4.0; 10]);
        assert_relative_eq!(e, 2.0);
        assert!(se < 1e-15);
    }
}
