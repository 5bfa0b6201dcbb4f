//! Closed-form bound calculators. All suppressed universal constants live in
//! [`ConstantsProfile`] (all ones by default) so that experiments can fit
//! effective constants instead of pretending the bounds are sharp.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{integrate_gk, sym_sqrt};
use crate::shifts::{omega_for, ShiftSchedule, DEFAULT_A_OVER_C0, DEFAULT_C0};

/// Multiplicative constants hidden behind `≲` in the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstantsProfile {
    /// Decay rate `c` inside the Harnack constant.
    pub harnack_rate: f64,
    /// Implied constant in front of the Harnack display.
    pub harnack_scale: f64,
    pub err_weak: f64,
    pub err_strong: f64,
    pub cross_reg: f64,
    /// Constant in every step-size precondition `h ≲ …`.
    pub step: f64,
    pub budget_h: f64,
    pub budget_n: f64,
}

impl Default for ConstantsProfile {
    fn default() -> Self {
        Self {
            harnack_rate: 1.0 / 48.0,
            harnack_scale: 1.0,
            err_weak: 1.0,
            err_strong: 1.0,
            cross_reg: 1.0,
            step: 1.0,
            budget_h: 1.0,
            budget_n: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `T = N h`.
    pub horizon: f64,
    pub h: f64,
    pub c0: f64,
    /// Offset `A` of the modified schedule, in units of `h`.
    pub a: f64,
}

impl RegimeParams {
    /// Default schedule constants `c0 = 192`, `A = 64 c0`.
    pub fn new(alpha: f64, beta: f64, gamma: f64, horizon: f64, h: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma, horizon, h, c0: DEFAULT_C0, a: DEFAULT_A_OVER_C0 * DEFAULT_C0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        omega_for(self.alpha, self.beta, self.gamma)?;
        if !(self.horizon > 0.0) || !(self.h > 0.0) || !(self.h <= self.horizon) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < h <= T, got h = {}, T = {}",
                self.h, self.horizon
            )));
        }
        if !(self.c0 > 0.0) || !(self.a >= 0.0) {
            return Err(Error::InvalidArgument(format!("bad schedule constants c0 = {}, A = {}", self.c0, self.a)));
        }
        Ok(())
    }

    pub fn omega(&self) -> f64 {
        omega_for(self.alpha, self.beta, self.gamma).unwrap_or(f64::NAN)
    }

    pub fn omega_plus(&self) -> f64 {
        self.omega().max(0.0)
    }

    /// `γ0 = γ + 1{T ≤ 1/|ω|}/T`.
    pub fn gamma0(&self) -> f64 {
        let w = self.omega().abs();
        if w == 0.0 || self.horizon <= 1.0 / w {
            self.gamma + 1.0 / self.horizon
        } else {
            self.gamma
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        (self.alpha > 0.0).then(|| self.beta / self.alpha)
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.h).round() as usize
    }

    pub fn high_friction_gamma(&self) -> f64 {
        (32.0 * self.beta).sqrt()
    }
}

/// `ω / (exp(c ω T) - 1)`, with the `ω → 0` limit `1/(cT)`.
fn decay_kernel(omega: f64, c: f64, t: f64) -> f64 {
    if omega == 0.0 {
        1.0 / (c * t)
    } else {
        omega / (c * omega * t).exp_m1()
    }
}

/// `C(α, β, γ, T) = K [(1/γ) r³ + γ r]`, `r = ω/(e^{cωT} - 1)`.
pub fn harnack_c(p: &RegimeParams, k: &ConstantsProfile) -> Result<f64> {
    p.validate()?;
    let r = decay_kernel(p.omega(), k.harnack_rate, p.horizon);
    Ok(k.harnack_scale * (r.powi(3) / p.gamma + p.gamma * r))
}

/// Short-time asymptote `1/(γT³) + γ/T`.
pub fn harnack_short_time(gamma: f64, horizon: f64) -> f64 {
    1.0 / (gamma * horizon.powi(3)) + gamma / horizon
}

/// The integral the Harnack proof actually bounds:
/// `(1/(16γ)) ∫_0^T γ_t² η_t² exp(-2c Λ_t) dt` with `Λ_t = ω₊ t + ∫_0^t η^p`.
/// Multiplied by the initial twisted distance squared it upper-bounds the
/// Girsanov energy of the continuous schedule, with no hidden constant.
pub fn harnack_proof_integral(p: &RegimeParams, k: &ConstantsProfile) -> Result<f64> {
    p.validate()?;
    let sched = ShiftSchedule::for_regime(p.alpha, p.beta, p.gamma, p.c0, p.horizon)?;
    let w = sched.omega_plus();
    let c = k.harnack_rate;
    let f = |t: f64| -> f64 {
        let eval = || -> Result<f64> {
            let e = sched.eta_p(t)?;
            let lam = w * t + sched.integrated_eta_p(0.0, t)?;
            let g = p.gamma + e;
            Ok(g * g * e * e * (-2.0 * c * lam).exp())
        };
        eval().unwrap_or(0.0)
    };
    Ok(integrate_gk(f, 0.0, p.horizon, 1e-10)? / (16.0 * p.gamma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrCase {
    StronglyConvex,
    WeaklyConvex,
    SemiConvex,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

fn check_err_regime(p: &RegimeParams, k: &ConstantsProfile, case: ErrCase) -> Result<()> {
    p.validate()?;
    let g_hi = p.high_friction_gamma();
    match case {
        ErrCase::StronglyConvex => {
            if !(p.alpha > 0.0) {
                return Err(Error::Regime(format!("strongly convex case needs alpha > 0, got {}", p.alpha)));
            }
            if !close(p.gamma, g_hi) {
                return Err(Error::Regime(format!("strongly convex case needs gamma = sqrt(32 beta) = {g_hi}")));
            }
            let kappa = p.beta / p.alpha;
            let h_max = k.step / (p.beta.sqrt() * kappa);
            if p.h > h_max {
                return Err(Error::Regime(format!("h = {} exceeds 1/(sqrt(beta) kappa) = {h_max}", p.h)));
            }
            if p.omega() * p.h >= 1.0 {
                return Err(Error::Regime("omega h >= 1 leaves log(1/(omega h)) non-positive".into()));
            }
        }
        ErrCase::WeaklyConvex => {
            if p.alpha != 0.0 {
                return Err(Error::Regime(format!("weakly convex case needs alpha = 0, got {}", p.alpha)));
            }
            if !close(p.gamma, g_hi) {
                return Err(Error::Regime(format!("weakly convex case needs gamma = sqrt(32 beta) = {g_hi}")));
            }
        }
        ErrCase::SemiConvex => {
            if p.gamma > g_hi * (1.0 + 1e-9) {
                return Err(Error::Regime(format!("semi-convex case needs gamma <= sqrt(32 beta) = {g_hi}")));
            }
        }
    }
    Ok(())
}

/// The `Err` term of the local-error framework for the given case.
pub fn err_bound(p: &RegimeParams, k: &ConstantsProfile, ew: f64, es: f64, case: ErrCase) -> Result<f64> {
    check_err_regime(p, k, case)?;
    let (h, t, sb) = (p.h, p.horizon, p.beta.sqrt());
    let (w2, s2) = (k.err_weak * ew * ew, k.err_strong * es * es);
    Ok(match case {
        ErrCase::StronglyConvex => w2 / (p.alpha * h * h) + (1.0 / (p.omega() * h)).ln() / (sb * h) * s2,
        ErrCase::WeaklyConvex => t * w2 / (sb * h * h) + ((t / h).ln() / (sb * h) + sb * t) * s2,
        ErrCase::SemiConvex => {
            t * w2 / (p.gamma * h * h) + ((1.0 / sb).min(t) / h).ln() / (p.gamma * h) * s2 + sb * t / (p.gamma * h) * s2
        }
    })
}

/// Semi-convex `Err` rebuilt by summing the main-term integral over the two
/// intervals split at `T0 = T + A h - 1/|ω|`, using the piecewise auxiliary
/// distance bounds. Agrees with [`err_bound`] when `T0 ≥ T` and is never
/// larger otherwise.
pub fn err_semiconvex_by_intervals(p: &RegimeParams, k: &ConstantsProfile, ew: f64, es: f64) -> Result<f64> {
    check_err_regime(p, k, ErrCase::SemiConvex)?;
    let (h, t, sb, g) = (p.h, p.horizon, p.beta.sqrt(), p.gamma);
    let (w2, s2) = (k.err_weak * ew * ew, k.err_strong * es * es);
    let w = p.omega().abs();
    let t0 = if w == 0.0 { t } else { (t + p.a * h - 1.0 / w).clamp(0.0, t) };
    let early = (w2 / (h * h) + sb * s2 / h) * t0 / g;
    let late = (t - t0) / (g * h * h) * w2 + ((1.0 / sb).min(t) / h).ln() / (g * h) * s2;
    Ok(early + late)
}

/// Cross-regularity of one ULMC step against the diffusion:
/// `‖δx‖²/(γh³) + ‖δp‖²/(γh) + β²h³q‖p‖²/γ + β²dh⁴q + β²h⁵q‖∇V(x)‖²/γ`.
#[allow(clippy::too_many_arguments)]
pub fn cross_reg_ulmc(
    p: &RegimeParams,
    k: &ConstantsProfile,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
    mom: &DVector<f64>,
    mom_bar: &DVector<f64>,
    grad_x: &DVector<f64>,
    q: f64,
) -> Result<f64> {
    p.validate()?;
    let d = x.len();
    if xbar.len() != d || mom.len() != d || mom_bar.len() != d || grad_x.len() != d {
        return Err(Error::InvalidArgument("cross-regularity inputs have mismatched dimensions".into()));
    }
    if !(q >= 2.0) {
        return Err(Error::InvalidArgument(format!("order q = {q} must be at least 2")));
    }
    let (g, b, h) = (p.gamma, p.beta, p.h);
    let h_max = k.step * (1.0 / g).min(g / b).min(1.0 / (b.sqrt() * q.sqrt()));
    if h > h_max {
        return Err(Error::Regime(format!("h = {h} exceeds the cross-regularity step limit {h_max}")));
    }
    let dx2 = (x - xbar).norm_squared();
    let dp2 = (mom - mom_bar).norm_squared();
    let b2 = b * b;
    let v = dx2 / (g * h.powi(3))
        + dp2 / (g * h)
        + b2 * h.powi(3) * q * mom.norm_squared() / g
        + b2 * d as f64 * h.powi(4) * q
        + b2 * h.powi(5) * q * grad_x.norm_squared() / g;
    Ok(k.cross_reg * v)
}

fn spd_cholesky(c: &DMatrix<f64>, name: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !c.is_square() {
        return Err(Error::Matrix(format!("{name} is not square")));
    }
    let asym = (c - c.transpose()).abs().max();
    if asym > 1e-10 * c.abs().max().max(1.0) {
        return Err(Error::Matrix(format!("{name} is not symmetric (asymmetry {asym:.3e})")));
    }
    c.clone().cholesky().ok_or_else(|| Error::Matrix(format!("{name} is not positive definite")))
}

fn check_dims(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<()> {
    let d = m1.len();
    if m2.len() != d || c1.nrows() != d || c2.nrows() != d {
        return Err(Error::Matrix("Gaussian parameters have mismatched dimensions".into()));
    }
    Ok(())
}

/// `KL(N(m1, C1) ‖ N(m2, C2))` with Cholesky log-determinants.
pub fn gaussian_kl(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    check_dims(m1, c1, m2, c2)?;
    let l1 = spd_cholesky(c1, "C1")?;
    let l2 = spd_cholesky(c2, "C2")?;
    let logdet = |l: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * l.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let d = m1.len() as f64;
    let trace = l2.solve(c1).trace();
    let diff = m2 - m1;
    let maha = diff.dot(&l2.solve(&diff));
    Ok((0.5 * (trace + maha - d + logdet(&l2) - logdet(&l1))).max(0.0))
}

/// Bures–Wasserstein `W2(N(m1, C1), N(m2, C2))`.
pub fn gaussian_w2(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    check_dims(m1, c1, m2, c2)?;
    spd_cholesky(c1, "C1")?;
    spd_cholesky(c2, "C2")?;
    let r2 = sym_sqrt(c2);
    let mut inner = &r2 * c1 * &r2;
    inner = 0.5 * (&inner + inner.transpose());
    let cross = sym_sqrt(&inner).trace();
    let bures = (c1.trace() + c2.trace() - 2.0 * cross).max(0.0);
    Ok(((m1 - m2).norm_squared() + bures).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetTheorem {
    /// ULMC, convex target.
    UlmcConvex,
    /// RM-ULMC, convex target.
    RmUlmcConvex,
    /// RM-ULMC under a log-Sobolev inequality.
    RmUlmcLsi,
    /// RM-ULMC under a Poincaré inequality with space-time decay.
    RmUlmcPoincare,
}

/// Facts about the initial law that the budgets depend on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitStats {
    /// Squared twisted W2 distance to the target.
    pub w2_sq: Option<f64>,
    /// Hypocoercive Lyapunov functional of the initial law.
    pub lyapunov: Option<f64>,
    /// Chi-squared divergence to the target.
    pub chi2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Budget {
    pub theorem: BudgetTheorem,
    pub case: &'static str,
    pub h: f64,
    pub n: f64,
    pub note: &'static str,
}

const BUDGET_NOTE: &str = "constants set to one; order of magnitude only";

/// Logs in the budgets are floored at one: `max(1, ln x)`.
fn log1(x: f64) -> f64 {
    x.ln().max(1.0)
}

fn need(v: Option<f64>, name: &str) -> Result<f64> {
    match v {
        Some(x) if x.is_finite() && x > 0.0 => Ok(x),
        _ => Err(Error::InvalidArgument(format!("budget needs a positive {name} in the init stats"))),
    }
}

fn in_range(eps: f64, max: f64) -> Result<()> {
    if !(eps > 0.0) || eps > max {
        return Err(Error::Range { eps, max });
    }
    Ok(())
}

/// Step size and iteration count for `KL ≤ ε²` (or `TV ≤ ε` under LSI).
/// `dim` is the ambient dimension `d`.
pub fn budget(
    theorem: BudgetTheorem,
    eps: f64,
    p: &RegimeParams,
    dim: usize,
    init: &InitStats,
    k: &ConstantsProfile,
) -> Result<Budget> {
    let (a, b, d) = (p.alpha, p.beta, dim as f64);
    if !(b > 0.0) || dim == 0 {
        return Err(Error::InvalidArgument("budget needs beta > 0 and d >= 1".into()));
    }
    let strongly = || -> Result<f64> {
        if a > 0.0 {
            Ok(b / a)
        } else {
            Err(Error::Regime(format!("{theorem:?} needs alpha > 0, got {a}")))
        }
    };
    let (case, h, n) = match theorem {
        BudgetTheorem::UlmcConvex if a > 0.0 => {
            let kappa = b / a;
            let w2 = need(init.w2_sq, "w2_sq")?;
            in_range(eps, (d / kappa).sqrt())?;
            let h = eps / (b.sqrt() * kappa.sqrt() * d.sqrt());
            let n = kappa.powf(1.5) * d.sqrt() / eps * log1(a * w2 / (eps * eps));
            ("strongly-convex", h, n)
        }
        BudgetTheorem::UlmcConvex | BudgetTheorem::RmUlmcConvex if a < 0.0 => {
            return Err(Error::Regime(format!("{theorem:?} needs alpha >= 0, got {a}")));
        }
        BudgetTheorem::UlmcConvex => {
            let w2 = need(init.w2_sq, "w2_sq")?;
            let w = w2.sqrt();
            in_range(eps, b.sqrt() * w)?;
            let h = eps * eps / (b * d.sqrt() * w + b.powf(1.5) * w2);
            let n = (b.powf(1.5) * d.sqrt() * w.powi(3) + b * b * w2 * w2) / eps.powi(4);
            ("weakly-convex", h, n)
        }
        BudgetTheorem::RmUlmcConvex if a > 0.0 => {
            let kappa = b / a;
            let w2 = need(init.w2_sq, "w2_sq")?;
            in_range(eps, d.sqrt() / kappa.powf(1.5))?;
            let h = eps.powf(2.0 / 3.0) / (b.sqrt() * d.cbrt());
            let n = kappa * d.cbrt() / eps.powf(2.0 / 3.0) * log1(a * w2 / (eps * eps));
            ("strongly-convex", h, n)
        }
        BudgetTheorem::RmUlmcConvex => {
            let w2 = need(init.w2_sq, "w2_sq")?;
            let w = w2.sqrt();
            in_range(eps, b.powf(0.75) * w.powf(1.5) / d.powf(0.25))?;
            let h = eps / (b.powf(0.75) * d.powf(0.25) * w.sqrt() + b * w);
            let n = (b.powf(1.25) * d.powf(0.25) * w.powf(2.5) + b.powf(1.5) * w.powi(3)) / eps.powi(3);
            ("weakly-convex", h, n)
        }
        BudgetTheorem::RmUlmcLsi => {
            let kappa = strongly()?;
            let lyap = need(init.lyapunov, "lyapunov")?;
            let chi2 = need(init.chi2, "chi2")?;
            in_range(eps, lyap.sqrt().min(1.0))?;
            let c_chi = (1.0 + chi2).ln() / d;
            let lg = log1(lyap / (eps * eps));
            let h = eps.powf(2.0 / 3.0) / ((1.0 + c_chi).cbrt() * b.sqrt() * kappa.cbrt() * d.cbrt() * lg.cbrt());
            let n = (1.0 + c_chi).cbrt() * kappa.powf(4.0 / 3.0) * d.cbrt() / eps.powf(2.0 / 3.0) * lg.powf(4.0 / 3.0);
            ("lsi", h, n)
        }
        BudgetTheorem::RmUlmcPoincare => {
            let kappa = strongly()?;
            let chi2 = need(init.chi2, "chi2")?;
            let lc = (1.0 + chi2).ln();
            in_range(eps, lc.sqrt())?;
            let lg = log1(chi2 / (eps * eps));
            let dim_term = d.cbrt() + lc.cbrt();
            let h = eps.powf(2.0 / 3.0) / (b.sqrt() * kappa.cbrt() * dim_term * lg.cbrt());
            let n = kappa.powf(5.0 / 6.0) * dim_term / eps.powf(2.0 / 3.0) * lg.powf(4.0 / 3.0);
            ("poincare", h, n)
        }
    };
    Ok(Budget { theorem, case, h: k.budget_h * h, n: k.budget_n * n, note: BUDGET_NOTE })
}
