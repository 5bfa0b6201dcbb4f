//! Synchronous coupling of a Langevin path with an auxiliary copy steered
//! toward it by the shift drift `η^x δX + η^p δP`.
//!
//! Under a shared Brownian motion the differences `(δX, δP)` solve a
//! deterministic linear ODE, so the pair is co-integrated on the noise-free
//! skeleton. The Girsanov energy `(1/4γ)∫‖η^x δX + η^p δP‖²` bounds the KL
//! divergence between the endpoint laws.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{GaussianMoments, PhaseState};
use crate::linalg::gauss_legendre_16;
use crate::potentials::{Gradient, Kind, Potential};
use crate::shifts::ShiftSchedule;

/// Drift model for both copies.
#[derive(Clone, Copy, Debug)]
pub enum Dynamics<'a> {
    /// `dX = P dt`, `dP = -∇V(X) dt - γP dt + sqrt(2γ) dB`.
    Uld(&'a Potential),
    /// `dX = P dt`, `dP = sqrt(2γ) dB`.
    IntegratedBm,
}

#[derive(Clone, Copy, Debug)]
pub enum ShiftRule {
    Schedule(ShiftSchedule),
    /// `η^p = 4/(T-t)`, `η^x = 6/(T-t)²`.
    OptimalIbm { gamma: f64, horizon: f64 },
}

impl ShiftRule {
    pub fn gamma(&self) -> f64 {
        match self {
            ShiftRule::Schedule(s) => s.gamma,
            ShiftRule::OptimalIbm { gamma, .. } => *gamma,
        }
    }
    pub fn horizon(&self) -> f64 {
        match self {
            ShiftRule::Schedule(s) => s.horizon,
            ShiftRule::OptimalIbm { horizon, .. } => *horizon,
        }
    }
    /// `(η^x_t, η^p_t)`.
    pub fn etas(&self, t: f64) -> Result<(f64, f64)> {
        match self {
            ShiftRule::Schedule(s) => Ok((s.eta_x(t)?, s.eta_p(t)?)),
            ShiftRule::OptimalIbm { horizon, .. } => {
                let r = horizon - t;
                if !(r > 0.0) {
                    return Err(Error::Domain(format!("optimal shift needs t < T, got t = {t}, T = {horizon}")));
                }
                Ok((6.0 / (r * r), 4.0 / r))
            }
        }
    }
    /// Whether the shift stays bounded up to `t = T`.
    fn finite_at_horizon(&self) -> bool {
        matches!(self, ShiftRule::Schedule(s) if s.is_modified())
    }
}

/// `(4/(T-t)) δp + (6/(T-t)²) δx`.
pub fn optimal_shift_ibm(horizon: f64, t: f64, dx: &DVector<f64>, dp: &DVector<f64>) -> Result<DVector<f64>> {
    let (ex, ep) = ShiftRule::OptimalIbm { gamma: 1.0, horizon }.etas(t)?;
    Ok(ex * dx + ep * dp)
}

/// Exact KL between the time-`T` laws of integrated Brownian motion started
/// at points differing by `(dx, dp)`.
pub fn kl_ibm_exact(gamma: f64, horizon: f64, dx: &DVector<f64>, dp: &DVector<f64>) -> Result<f64> {
    if !(horizon > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("need T > 0 and gamma > 0, got {horizon}, {gamma}")));
    }
    let t = horizon;
    Ok(dp.norm_squared() / (gamma * t) + 3.0 * dp.dot(dx) / (gamma * t * t) + 3.0 * dx.norm_squared() / (gamma * t.powi(3)))
}

/// Law of `(X_T, P_T)` for integrated Brownian motion from `(x, p)`:
/// mean `(x + pT, p)`, covariance `2γ [[T³/3, T²/2], [T²/2, T]] ⊗ I`.
pub fn ibm_endpoint_law(gamma: f64, horizon: f64, s: &PhaseState) -> GaussianMoments {
    let d = s.dim();
    let t = horizon;
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        cov[(i, i)] = 2.0 * gamma * t.powi(3) / 3.0;
        cov[(i, d + i)] = gamma * t * t;
        cov[(d + i, i)] = gamma * t * t;
        cov[(d + i, d + i)] = 2.0 * gamma * t;
    }
    let mean = PhaseState { x: &s.x + t * &s.p, p: s.p.clone() }.stacked();
    GaussianMoments { mean, cov }
}

/// `‖(δX, δX + (2/γ_t) δP)‖`.
pub fn twisted_dist(dx: &DVector<f64>, dp: &DVector<f64>, gamma_t: f64) -> f64 {
    (dx.norm_squared() + (dx + (2.0 / gamma_t) * dp).norm_squared()).sqrt()
}

/// `∫₀¹ ∇²V(x - s δx) ds · δx` by 16-node Gauss-Legendre (a single product
/// for linear gradients).
pub fn integrated_hessian_vec(pot: &Potential, x: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
    match pot.kind() {
        Kind::Quadratic { .. } | Kind::Zero => pot.hessian_vec(x, dx),
        _ => {
            let (nodes, weights) = gauss_legendre_16();
            let mut acc = DVector::zeros(x.len());
            for (z, w) in nodes.iter().zip(weights) {
                let s = 0.5 * (z + 1.0);
                acc += 0.5 * w * pot.hessian_vec(&(x - s * dx), dx);
            }
            acc
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledRecord {
    pub t: f64,
    pub twisted_dist: f64,
    pub energy: f64,
    /// `‖η^x δX + η^p δP‖² / (4γ)` at `t`.
    pub integrand: f64,
    pub eta_p: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledState {
    pub main: PhaseState,
    pub aux: PhaseState,
    pub t: f64,
    pub twisted_dist: f64,
    pub girsanov_energy: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<CoupledRecord>,
    pub end: CoupledState,
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    /// Largest step.
    pub dt: f64,
    /// Steps are capped at `rate_step / rate(t)`, where the rate tracks the
    /// stiffness `γ + η^p + sqrt(η^x + β)`; near a blow-up at `T` this makes
    /// the step uniform in `log(T - t)`.
    pub rate_step: f64,
    pub t_stop: f64,
}

impl OdeOptions {
    pub fn new(dt: f64, t_stop: f64) -> Self {
        Self { dt, rate_step: 0.02, t_stop }
    }
}

/// Packed ODE state `(X, P, δX, δP, E)`.
struct Packed {
    d: usize,
}

impl Packed {
    fn pack(&self, main: &PhaseState, dx: &DVector<f64>, dp: &DVector<f64>, e: f64) -> DVector<f64> {
        let d = self.d;
        DVector::from_fn(4 * d + 1, |i, _| match i / d.max(1) {
            _ if i == 4 * d => e,
            0 => main.x[i],
            1 => main.p[i - d],
            2 => dx[i - 2 * d],
            _ => dp[i - 3 * d],
        })
    }
    fn part(&self, y: &DVector<f64>, k: usize) -> DVector<f64> {
        y.rows(k * self.d, self.d).into_owned()
    }
}

struct Skeleton<'a> {
    dynamics: Dynamics<'a>,
    friction: f64,
    noise_gamma: f64,
    packed: Packed,
}

impl<'a> Skeleton<'a> {
    fn new(dynamics: Dynamics<'a>, gamma: f64, d: usize) -> Self {
        let friction = match dynamics {
            Dynamics::Uld(_) => gamma,
            Dynamics::IntegratedBm => 0.0,
        };
        Self { dynamics, friction, noise_gamma: gamma, packed: Packed { d } }
    }

    fn beta(&self) -> f64 {
        match self.dynamics {
            Dynamics::Uld(p) => p.beta().abs(),
            Dynamics::IntegratedBm => 0.0,
        }
    }

    fn rhs(&self, y: &DVector<f64>, (ex, ep): (f64, f64)) -> DVector<f64> {
        let pk = &self.packed;
        let (x, p, dx, dp) = (pk.part(y, 0), pk.part(y, 1), pk.part(y, 2), pk.part(y, 3));
        let (f_main, h_dx) = match self.dynamics {
            Dynamics::Uld(pot) => (-pot.grad(&x) - self.friction * &p, integrated_hessian_vec(pot, &x, &dx)),
            Dynamics::IntegratedBm => (DVector::zeros(pk.d), DVector::zeros(pk.d)),
        };
        let shift = ex * &dx + ep * &dp;
        let ddp = -h_dx - self.friction * &dp - &shift;
        let de = shift.norm_squared() / (4.0 * self.noise_gamma);
        pk.pack(&PhaseState { x: p, p: f_main }, &dp, &ddp, de)
    }

    fn rk4<F>(&self, y: &DVector<f64>, t: f64, dt: f64, etas: &F) -> Result<DVector<f64>>
    where
        F: Fn(f64) -> Result<(f64, f64)>,
    {
        let k1 = self.rhs(y, etas(t)?);
        let k2 = self.rhs(&(y + 0.5 * dt * &k1), etas(t + 0.5 * dt)?);
        let k3 = self.rhs(&(y + 0.5 * dt * &k2), etas(t + 0.5 * dt)?);
        let k4 = self.rhs(&(y + dt * &k3), etas(t + dt)?);
        Ok(y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    }

    fn step_size<F>(&self, t: f64, opts: &OdeOptions, etas: &F) -> Result<f64>
    where
        F: Fn(f64) -> Result<(f64, f64)>,
    {
        let (ex, ep) = etas(t)?;
        let rate = self.friction + ep + (ex + self.beta()).sqrt();
        let mut dt = opts.dt;
        if rate > 0.0 {
            dt = dt.min(opts.rate_step / rate);
        }
        Ok(dt.min(opts.t_stop - t))
    }

    fn unpack_state(&self, y: &DVector<f64>, t: f64, gamma_t: f64) -> CoupledState {
        let pk = &self.packed;
        let main = PhaseState { x: pk.part(y, 0), p: pk.part(y, 1) };
        let (dx, dp) = (pk.part(y, 2), pk.part(y, 3));
        let aux = PhaseState { x: &main.x - &dx, p: &main.p - &dp };
        CoupledState { twisted_dist: twisted_dist(&dx, &dp, gamma_t), girsanov_energy: y[4 * pk.d], main, aux, t }
    }
}

fn check_pair(main: &PhaseState, aux: &PhaseState) -> Result<()> {
    if main.dim() != aux.dim() {
        return Err(Error::InvalidArgument(format!("pair dims differ: {} vs {}", main.dim(), aux.dim())));
    }
    Ok(())
}

/// Co-integrates the pair on `[0, t_stop]` with RK4, recording the twisted
/// distance and the running Girsanov energy after every step.
pub fn evolve_coupled(
    dynamics: Dynamics<'_>,
    rule: &ShiftRule,
    init_main: &PhaseState,
    init_aux: &PhaseState,
    opts: &OdeOptions,
) -> Result<Trajectory> {
    check_pair(init_main, init_aux)?;
    let horizon = rule.horizon();
    if !(opts.t_stop > 0.0) || opts.t_stop > horizon || (opts.t_stop == horizon && !rule.finite_at_horizon()) {
        return Err(Error::Domain(format!("t_stop = {} must lie in (0, T) for T = {horizon}", opts.t_stop)));
    }
    if !(opts.dt > 0.0) || !(opts.rate_step > 0.0) {
        return Err(Error::InvalidArgument("ODE step controls must be positive".into()));
    }
    let sk = Skeleton::new(dynamics, rule.gamma(), init_main.dim());
    let etas = |t: f64| rule.etas(t);
    let gamma_t = |t: f64| -> Result<f64> { Ok(sk.friction + rule.etas(t)?.1) };
    let dx0 = &init_main.x - &init_aux.x;
    let dp0 = &init_main.p - &init_aux.p;
    let mut y = sk.packed.pack(init_main, &dx0, &dp0, 0.0);
    let mut t = 0.0;
    let record = |y: &DVector<f64>, t: f64| -> Result<CoupledRecord> {
        let (ex, ep) = etas(t)?;
        let (dx, dp) = (sk.packed.part(y, 2), sk.packed.part(y, 3));
        Ok(CoupledRecord {
            t,
            twisted_dist: twisted_dist(&dx, &dp, sk.friction + ep),
            energy: y[4 * sk.packed.d],
            integrand: (ex * &dx + ep * &dp).norm_squared() / (4.0 * sk.noise_gamma),
            eta_p: ep,
        })
    };
    let mut records = vec![record(&y, t)?];
    while t < opts.t_stop {
        let dt = sk.step_size(t, opts, &etas)?;
        if dt <= 0.0 {
            break;
        }
        y = sk.rk4(&y, t, dt, &etas)?;
        t = if opts.t_stop - (t + dt) < 1e-15 * horizon { opts.t_stop } else { t + dt };
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::Integration { t });
        }
        records.push(record(&y, t)?);
    }
    let end = sk.unpack_state(&y, t, gamma_t(t)?);
    Ok(Trajectory { records, end })
}

#[derive(Clone, Debug)]
pub struct GirsanovBound {
    /// Energy accumulated up to the stopping time plus the extrapolated tail.
    pub kl_bound: f64,
    pub tail: f64,
    /// Fitted power `k` of the integrand `∝ (T - t)^k` near `T`.
    pub tail_power: f64,
    /// Set when the tail extrapolation is unreliable (`k ≤ -1`).
    pub truncation_warning: bool,
    pub trajectory: Trajectory,
}

/// Girsanov KL bound. Continuous schedules are integrated to `T(1 - 1e-6)`
/// and the remaining tail is extrapolated from the integrand's power-law
/// decay over the last decade of `T - t`.
pub fn girsanov_kl_bound(
    dynamics: Dynamics<'_>,
    rule: &ShiftRule,
    init_main: &PhaseState,
    init_aux: &PhaseState,
    dt: f64,
) -> Result<GirsanovBound> {
    let horizon = rule.horizon();
    let t_stop = if rule.finite_at_horizon() { horizon } else { horizon * (1.0 - 1e-6) };
    let trajectory = evolve_coupled(dynamics, rule, init_main, init_aux, &OdeOptions::new(dt, t_stop))?;
    let recs = &trajectory.records;
    let last = recs.last().ok_or_else(|| Error::InsufficientData("empty trajectory".into()))?;
    let (mut tail, mut tail_power, mut truncation_warning) = (0.0, f64::NAN, false);
    if !rule.finite_at_horizon() {
        let tau_end = horizon - last.t;
        let target = 10.0 * tau_end;
        let earlier = recs.iter().rev().find(|r| horizon - r.t >= target);
        match earlier {
            Some(r) if last.integrand > 0.0 && r.integrand > 0.0 => {
                let k = (r.integrand / last.integrand).ln() / ((horizon - r.t) / tau_end).ln();
                tail_power = k;
                if k > -1.0 {
                    tail = last.integrand * tau_end / (k + 1.0);
                } else {
                    truncation_warning = true;
                }
            }
            Some(_) => tail_power = f64::INFINITY,
            None => truncation_warning = true,
        }
    }
    Ok(GirsanovBound { kl_bound: last.energy + tail, tail, tail_power, truncation_warning, trajectory })
}

/// Result of one "diffuse then shift" window.
#[derive(Clone, Debug, Serialize)]
pub struct WindowResult {
    pub t_minus: f64,
    pub d_start: f64,
    pub d_end: f64,
    pub factor: f64,
    /// `∫(ω₊ + η^p)` over the window.
    pub rate_integral: f64,
    /// `-ln(factor) / rate_integral`.
    pub fitted_c: f64,
}

/// Runs both copies by synchronous ULD over `[t_minus, t_minus + h]`
/// (noise-free skeleton), then shifts the second copy's momentum by
/// `(∫η^x) δX + (∫η^p) δP`. Distances are measured in twisted coordinates at
/// the start and end of the window.
pub fn diffuse_then_shift_step(
    pot: &Potential,
    sched: &ShiftSchedule,
    main: &PhaseState,
    sh: &PhaseState,
    t_minus: f64,
    h: f64,
) -> Result<(PhaseState, PhaseState, WindowResult)> {
    check_pair(main, sh)?;
    let t_plus = t_minus + h;
    if t_minus < 0.0 || t_plus > sched.horizon * (1.0 + 1e-12) || !(h > 0.0) {
        return Err(Error::Domain(format!("window [{t_minus}, {t_plus}] outside [0, {}]", sched.horizon)));
    }
    let t_plus = t_plus.min(sched.horizon);
    let sk = Skeleton::new(Dynamics::Uld(pot), sched.gamma, main.dim());
    let no_shift = |_: f64| -> Result<(f64, f64)> { Ok((0.0, 0.0)) };
    let eta_max = sched.eta_p(t_plus)?.max(sched.eta_p(t_minus)?);
    let rate = sched.gamma + eta_max + pot.beta().abs().sqrt();
    let n_sub = 64usize.max((h * rate / 0.01).ceil() as usize);
    let dt = (t_plus - t_minus) / n_sub as f64;
    let dx0 = &main.x - &sh.x;
    let dp0 = &main.p - &sh.p;
    let d_start = twisted_dist(&dx0, &dp0, sched.gamma_t(t_minus)?);
    let mut y = sk.packed.pack(main, &dx0, &dp0, 0.0);
    for k in 0..n_sub {
        y = sk.rk4(&y, t_minus + k as f64 * dt, dt, &no_shift)?;
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Integration { t: t_plus });
    }
    let (ip, ix) = sched.integrated_eta(t_minus, t_plus)?;
    let new_main = PhaseState { x: sk.packed.part(&y, 0), p: sk.packed.part(&y, 1) };
    let dx = sk.packed.part(&y, 2);
    let dp = (1.0 - ip) * sk.packed.part(&y, 3) - ix * &dx;
    let d_end = twisted_dist(&dx, &dp, sched.gamma_t(t_plus)?);
    let new_sh = PhaseState { x: &new_main.x - &dx, p: &new_main.p - &dp };
    let rate_integral = sched.omega_plus() * (t_plus - t_minus) + ip;
    let factor = if d_start > 0.0 { d_end / d_start } else { 0.0 };
    let fitted_c = if rate_integral > 0.0 && factor > 0.0 { -factor.ln() / rate_integral } else { f64::INFINITY };
    Ok((new_main, new_sh, WindowResult { t_minus, d_start, d_end, factor, rate_integral, fitted_c }))
}

/// Applies `diffuse_then_shift_step` over all `T/h` windows of the schedule.
pub fn diffuse_then_shift_run(
    pot: &Potential,
    sched: &ShiftSchedule,
    main: &PhaseState,
    sh: &PhaseState,
) -> Result<Vec<WindowResult>> {
    if !(sched.h > 0.0) {
        return Err(Error::InvalidArgument("discrete run needs a schedule with h > 0".into()));
    }
    let n = (sched.horizon / sched.h).round() as usize;
    let mut out = Vec::with_capacity(n);
    let (mut m, mut s) = (main.clone(), sh.clone());
    for k in 0..n {
        let (m2, s2, w) = diffuse_then_shift_step(pot, sched, &m, &s, k as f64 * sched.h, sched.h)?;
        out.push(w);
        m = m2;
        s = s2;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn optimal_shift_values() {
        assert_eq!(optimal_shift_ibm(1.0, 0.0, &v(&[0.0]), &v(&[0.0])).unwrap()[0], 0.0);
        assert_relative_eq!(optimal_shift_ibm(1.0, 0.0, &v(&[1.0]), &v(&[0.0])).unwrap()[0], 6.0);
        assert!(matches!(optimal_shift_ibm(1.0, 1.0, &v(&[1.0]), &v(&[0.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn kl_ibm_value() {
        assert_relative_eq!(kl_ibm_exact(1.0, 1.0, &v(&[1.0]), &v(&[0.0])).unwrap(), 3.0);
        assert_eq!(kl_ibm_exact(2.0, 3.0, &v(&[0.0, 0.0]), &v(&[0.0, 0.0])).unwrap(), 0.0);
    }

    #[test]
    fn identical_pair_stays_identical() {
        let pot = Potential::make_gaussian(&[1.0, 3.0]).unwrap();
        let s = PhaseState::new(v(&[1.0, -1.0]), v(&[0.5, 0.0])).unwrap();
        let rule = ShiftRule::Schedule(ShiftSchedule::for_regime(1.0, 3.0, 10.0, 192.0, 1.0).unwrap());
        let tr = evolve_coupled(Dynamics::Uld(&pot), &rule, &s, &s, &OdeOptions::new(1e-2, 0.9)).unwrap();
        assert!(tr.records.iter().all(|r| r.twisted_dist == 0.0 && r.energy == 0.0));
    }

    #[test]
    fn integrated_hessian_is_exact_on_gradient_difference() {
        let pot = Potential::make_trig_nonconvex(3, 2.0).unwrap();
        let x = v(&[0.3, 1.0, -2.0]);
        let dx = v(&[0.2, -0.4, 0.1]);
        let want = pot.grad(&x) - pot.grad(&(&x - &dx));
        let got = integrated_hessian_vec(&pot, &x, &dx);
        assert!((want - got).norm() < 1e-13);
    }

    #[test]
    fn girsanov_with_optimal_shift_is_tight() {
        let (gamma, horizon) = (0.8, 1.5);
        let main = PhaseState::new(v(&[1.0, -0.5]), v(&[0.3, 0.7])).unwrap();
        let aux = PhaseState::zeros(2);
        let rule = ShiftRule::OptimalIbm { gamma, horizon };
        let g = girsanov_kl_bound(Dynamics::IntegratedBm, &rule, &main, &aux, 1e-2).unwrap();
        let exact = kl_ibm_exact(gamma, horizon, &main.x, &main.p).unwrap();
        assert!(!g.truncation_warning);
        assert_relative_eq!(g.kl_bound, exact, max_relative = 1e-4);
    }

    #[test]
    fn energy_is_monotone() {
        let pot = Potential::make_trig_nonconvex(2, 1.0).unwrap();
        let rule = ShiftRule::Schedule(ShiftSchedule::for_regime(-1.0, 1.0, 1.0, 192.0, 2.0).unwrap());
        let main = PhaseState::new(v(&[0.5, 0.1]), v(&[0.0, 1.0])).unwrap();
        let aux = PhaseState::new(v(&[-0.5, 0.0]), v(&[0.2, 0.0])).unwrap();
        let tr = evolve_coupled(Dynamics::Uld(&pot), &rule, &main, &aux, &OdeOptions::new(1e-2, 1.99)).unwrap();
        assert!(tr.records.windows(2).all(|w| w[1].energy >= w[0].energy));
    }

    #[test]
    fn unshifted_window_is_pure_synchronous_flow() {
        let pot = Potential::make_gaussian(&[1.0, 2.0]).unwrap();
        let sched = ShiftSchedule::modified(0.0, 0.0, 1.0, 1.0, 0.01, 10.0).unwrap();
        let mut m = PhaseState::new(v(&[1.0, 0.0]), v(&[0.0, 1.0])).unwrap();
        let mut s = PhaseState::zeros(2);
        for k in 0..20 {
            let (m2, s2, w) = diffuse_then_shift_step(&pot, &sched, &m, &s, k as f64 * 0.01, 0.01).unwrap();
            assert!(w.d_end <= w.d_start * (1.0 + 1e-12));
            m = m2;
            s = s2;
        }
    }
}
