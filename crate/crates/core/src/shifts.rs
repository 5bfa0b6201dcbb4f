//! Shift schedules for the auxiliary process and the per-eigenvalue 2×2
//! blocks of the contraction matrices in twisted coordinates
//! `(x, z) = (x, x + (2/γ_t) p)`, `γ_t = γ + η_t^p`.
//!
//! Everything is expressed per eigenvalue `λ ∈ [α, β]` of the integrated
//! Hessian; the 2d×2d matrices are never formed.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::integrate_gk;

/// Regime rate: `α/(3γ)` at high friction (`γ ≥ √(32β)`), else `-√β/3`.
pub fn omega_for(alpha: f64, beta: f64, gamma: f64) -> Result<f64> {
    if !(beta >= alpha.abs()) || !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need beta >= |alpha| and gamma > 0, got alpha={alpha}, beta={beta}, gamma={gamma}"
        )));
    }
    Ok(if gamma >= (32.0 * beta).sqrt() { alpha / (3.0 * gamma) } else { -beta.sqrt() / 3.0 })
}

pub const DEFAULT_C0: f64 = 192.0;
pub const DEFAULT_A_OVER_C0: f64 = 64.0;

/// `η_t^p = c0 ω / (exp(ω(T - t + A h)) - 1)`; `A = 0` gives the continuous
/// schedule, which blows up at `t = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSchedule {
    pub omega: f64,
    pub c0: f64,
    pub a: f64,
    pub horizon: f64,
    pub h: f64,
    pub gamma: f64,
}

/// `ln |1 - e^{-y}|`, finite for any nonzero `y`.
fn ln_abs_one_minus_exp(y: f64) -> f64 {
    if y >= 0.0 {
        (-(-y).exp_m1()).ln()
    } else {
        -y + (-y.exp_m1()).ln()
    }
}

impl ShiftSchedule {
    pub fn continuous(omega: f64, c0: f64, horizon: f64, gamma: f64) -> Result<Self> {
        Self::modified(omega, c0, 0.0, horizon, 0.0, gamma)
    }

    pub fn modified(omega: f64, c0: f64, a: f64, horizon: f64, h: f64, gamma: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(gamma > 0.0) || !(c0 >= 0.0) || !(a >= 0.0) || !(h >= 0.0) || !omega.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad schedule: omega={omega}, c0={c0}, A={a}, T={horizon}, h={h}, gamma={gamma}"
            )));
        }
        if a > 0.0 && h == 0.0 {
            return Err(Error::InvalidArgument("modified schedule needs h > 0".into()));
        }
        Ok(Self { omega, c0, a, horizon, h, gamma })
    }

    /// Continuous schedule with `ω` chosen from the regime.
    pub fn for_regime(alpha: f64, beta: f64, gamma: f64, c0: f64, horizon: f64) -> Result<Self> {
        Self::continuous(omega_for(alpha, beta, gamma)?, c0, horizon, gamma)
    }

    pub fn is_modified(&self) -> bool {
        self.a > 0.0
    }

    pub fn omega_plus(&self) -> f64 {
        self.omega.max(0.0)
    }

    /// Remaining time `T - t + A h`.
    fn tau(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t > self.horizon {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.horizon)));
        }
        let tau = self.horizon - t + self.a * self.h;
        if tau <= 0.0 {
            return Err(Error::ScheduleDegenerate { t });
        }
        Ok(tau)
    }

    pub fn eta_p(&self, t: f64) -> Result<f64> {
        let tau = self.tau(t)?;
        Ok(if self.omega == 0.0 { self.c0 / tau } else { self.c0 * self.omega / (self.omega * tau).exp_m1() })
    }

    pub fn gamma_t(&self, t: f64) -> Result<f64> {
        Ok(self.gamma + self.eta_p(t)?)
    }

    pub fn eta_x(&self, t: f64) -> Result<f64> {
        let e = self.eta_p(t)?;
        Ok((self.gamma + e) * e / 2.0)
    }

    /// `η̇ = ωη + η²/c0`, which is also `γ̇_t`.
    pub fn eta_dot(&self, t: f64) -> Result<f64> {
        let e = self.eta_p(t)?;
        Ok(if self.c0 == 0.0 { 0.0 } else { self.omega * e + e * e / self.c0 })
    }

    /// `∫_a^b η^p` in closed form.
    pub fn integrated_eta_p(&self, a: f64, b: f64) -> Result<f64> {
        let (ta, tb) = (self.tau(a)?, self.tau(b)?);
        if self.c0 == 0.0 || a == b {
            return Ok(0.0);
        }
        Ok(if self.omega == 0.0 {
            self.c0 * (ta / tb).ln()
        } else {
            self.c0 * (ln_abs_one_minus_exp(self.omega * ta) - ln_abs_one_minus_exp(self.omega * tb))
        })
    }

    /// `(∫_a^b η^p, ∫_a^b η^x)` in closed form. The second integral uses
    /// `η² = c0 (η̇ - ωη)`.
    pub fn integrated_eta(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        if a > b {
            return Err(Error::ArgumentOrder(format!("integration bounds a = {a} > b = {b}")));
        }
        let ip = self.integrated_eta_p(a, b)?;
        let rise = self.eta_p(b)? - self.eta_p(a)?;
        let drift = self.omega * ip;
        let mut sq = self.c0 * (rise - drift);
        // the difference cancels when η << c0 ω; integrate η² directly there
        if (rise - drift).abs() < 1e-4 * rise.abs().max(drift.abs()) {
            sq = integrate_gk(|t| self.eta_p(t).map_or(f64::NAN, |e| e * e), a, b, 1e-13)?;
        }
        Ok((ip, 0.5 * self.gamma * ip + 0.5 * sq))
    }

    /// Same integrals by adaptive Gauss-Kronrod, for cross-checking.
    pub fn integrated_eta_quadrature(&self, a: f64, b: f64, rel_tol: f64) -> Result<(f64, f64)> {
        if a > b {
            return Err(Error::ArgumentOrder(format!("integration bounds a = {a} > b = {b}")));
        }
        self.tau(a)?;
        self.tau(b)?;
        let ip = integrate_gk(|t| self.eta_p(t).unwrap_or(f64::NAN), a, b, rel_tol)?;
        let ix = integrate_gk(|t| self.eta_x(t).unwrap_or(f64::NAN), a, b, rel_tol)?;
        Ok((ip, ix))
    }
}

/// `b_t^λ = λ + γ_t η_t/2 - η̇_t/2`.
pub fn b_lambda(sched: &ShiftSchedule, t: f64, lambda: f64) -> Result<f64> {
    let e = sched.eta_p(t)?;
    Ok(lambda + (sched.gamma + e) * e / 2.0 - sched.eta_dot(t)? / 2.0)
}

/// Reduced eigenblock `[[γ_t/2, b/γ_t - γ_t/2], [·, γ_t/2]]` (the nonnegative
/// `γ̇/γ_t` term dropped from the bottom-right entry).
pub fn matrix_m(sched: &ShiftSchedule, t: f64, lambda: f64) -> Result<Matrix2<f64>> {
    let g = sched.gamma_t(t)?;
    let off = b_lambda(sched, t, lambda)? / g - g / 2.0;
    Ok(Matrix2::new(g / 2.0, off, off, g / 2.0))
}

/// Full eigenblock of the distance decay matrix, including `γ̇/γ_t`.
pub fn matrix_m_full(sched: &ShiftSchedule, t: f64, lambda: f64) -> Result<Matrix2<f64>> {
    let mut m = matrix_m(sched, t, lambda)?;
    m[(1, 1)] += sched.eta_dot(t)? / sched.gamma_t(t)?;
    Ok(m)
}

pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let mid = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let rad = (0.5 * (m[(0, 0)] - m[(1, 1)])).hypot(off);
    (mid - rad, mid + rad)
}

pub fn op_norm2(m: &Matrix2<f64>) -> f64 {
    m.singular_values().max()
}

/// `n` evenly spaced values on `[alpha, beta]` (endpoints included).
pub fn lambda_grid(alpha: f64, beta: f64, n: usize) -> Vec<f64> {
    if n <= 1 || alpha == beta {
        return vec![alpha];
    }
    (0..n).map(|i| alpha + (beta - alpha) * i as f64 / (n - 1) as f64).collect()
}

pub const DEFAULT_LAMBDA_POINTS: usize = 65;

/// Time grid for certification: half uniform on `[0, T)`, half geometric in
/// `T - t` down to `1e-8 T`, so the blow-up near `T` is sampled.
pub fn certify_time_grid(horizon: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    let n_lin = n / 2;
    let n_geo = n - n_lin;
    let mut grid: Vec<f64> = (0..n_lin).map(|i| horizon * i as f64 / n_lin as f64).collect();
    for k in 0..n_geo {
        let e = -2.0 - 6.0 * k as f64 / (n_geo - 1).max(1) as f64;
        grid.push(horizon * (1.0 - 10f64.powf(e)));
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[derive(Clone, Debug, Serialize)]
pub struct CertPoint {
    pub t: f64,
    pub lambda: f64,
    pub lambda_min: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertReport {
    pub n_points: usize,
    pub worst: CertPoint,
    pub violations: usize,
}

/// Evaluates `λ_min(M_t^λ) - (ω₊/2 + η_t/48)` over the grid.
pub fn lambda_min_sweep(sched: &ShiftSchedule, t_grid: &[f64], lambda_grid: &[f64]) -> Result<Vec<CertPoint>> {
    let mut out = Vec::with_capacity(t_grid.len() * lambda_grid.len());
    for &t in t_grid {
        let eta = sched.eta_p(t)?;
        let bound = sched.omega_plus() / 2.0 + eta / 48.0;
        for &lambda in lambda_grid {
            let (lmin, _) = sym2_eigenvalues(&matrix_m(sched, t, lambda)?);
            out.push(CertPoint { t, lambda, lambda_min: lmin, bound, slack: lmin - bound });
        }
    }
    Ok(out)
}

/// Certifies the contraction rate at every grid point; relative slack of
/// `-1e-12` is tolerated for rounding.
pub fn lambda_min_certify(sched: &ShiftSchedule, t_grid: &[f64], lambda_grid: &[f64]) -> Result<CertReport> {
    if sched.c0 < 24.0 {
        return Err(Error::InvalidArgument(format!("certification needs c0 >= 24, got {}", sched.c0)));
    }
    let pts = lambda_min_sweep(sched, t_grid, lambda_grid)?;
    let violates = |p: &CertPoint| p.slack < -1e-12 * p.bound.abs().max(1.0);
    let violations = pts.iter().filter(|p| violates(p)).count();
    let worst = pts
        .iter()
        .min_by(|a, b| a.slack.total_cmp(&b.slack))
        .cloned()
        .ok_or_else(|| Error::InsufficientData("empty certification grid".into()))?;
    if violations > 0 {
        return Err(Error::Certification { t: worst.t, lambda: worst.lambda, value: worst.lambda_min, bound: worst.bound });
    }
    Ok(CertReport { n_points: pts.len(), worst, violations })
}

/// Per-eigenvalue blocks of the "diffuse then shift" dynamics on a window
/// starting at `t_minus`, evaluated at time `t`.
#[derive(Clone, Copy, Debug)]
pub struct DiscreteBlocks {
    pub m: Matrix2<f64>,
    pub m_skew: Matrix2<f64>,
    pub n: Matrix2<f64>,
    /// Shift map on `(δX, δP)`.
    pub phi: Matrix2<f64>,
    /// Shift map on `(δX, δZ)`.
    pub upphi: Matrix2<f64>,
}

pub fn matrices_discrete(sched: &ShiftSchedule, t_minus: f64, t: f64, lambda: f64) -> Result<DiscreteBlocks> {
    if t < t_minus || (sched.h > 0.0 && t > t_minus + sched.h * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("t = {t} outside window starting at {t_minus}")));
    }
    let g = sched.gamma;
    let gt = sched.gamma_t(t)?;
    let ex = sched.eta_x(t)?;
    let gd = sched.eta_dot(t)?;
    let (ip, ix) = sched.integrated_eta(t_minus, t)?;
    let m = matrix_m_full(sched, t, lambda)?;
    let k = ex / gt - gd / (2.0 * gt) + lambda / gt;
    let m_skew = Matrix2::new(0.0, -k, k, 0.0);
    let n21 = -ix + g * ip + gd * ip / gt - 2.0 * gd * ix / (gt * gt) - 2.0 * ip * lambda / gt;
    let n22 = ix - g * ip - gd * ip / gt;
    let n = Matrix2::new(0.0, 0.0, n21, n22);
    let phi = Matrix2::new(1.0, 0.0, -ix, 1.0 - ip);
    let upphi = Matrix2::new(1.0, 0.0, ip - 2.0 * ix / gt, 1.0 - ip);
    Ok(DiscreteBlocks { m, m_skew, n, phi, upphi })
}
