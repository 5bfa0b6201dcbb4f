//! Gaussian noise of one integrator step.
//!
//! For a standard Brownian motion `B` on `[0, h]`:
//!
//! ```text
//! ξ1_t = sqrt(2/γ) ∫_0^t (1 - e^{-γ(t-s)}) dB_s
//! ξ2_t = sqrt(2γ)  ∫_0^t e^{-γ(t-s)} dB_s
//! ```
//!
//! Coordinates are i.i.d., so everything here is per coordinate.

use nalgebra::{DVector, Matrix2, Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{one_minus_exp, psd_cholesky4};

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma must be positive and finite, got {gamma}")))
    }
}

/// `x - (1+a)(1-e^{-x}) + a(1-e^{-2x})/2`, with `a = e^{-γ(t-s)}` and
/// `one_minus_a = 1 - a` passed separately to keep precision when `a ≈ 1`.
fn xi1_bracket(x: f64, a: f64, one_minus_a: f64) -> f64 {
    if x < 0.1 {
        // the linear terms cancel exactly; sum the rest
        let mut sum = 0.0;
        let mut pow = x * x / 2.0; // x^k / k!
        let mut two_pow = 2.0; // 2^{k-1}
        for k in 2..40 {
            let c = if k == 2 { -one_minus_a } else { a * (two_pow - 1.0) - 1.0 };
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            let term = sign * pow * c;
            sum += term;
            if k > 4 && term.abs() <= 1e-18 * sum.abs() {
                break;
            }
            pow *= x / (k + 1) as f64;
            two_pow *= 2.0;
        }
        sum
    } else {
        x - (1.0 + a) * one_minus_exp(x) + 0.5 * a * one_minus_exp(2.0 * x)
    }
}

/// `cov(ξ1_s, ξ1_t)` for `0 <= s <= t`.
pub fn cov_xi1_xi1(gamma: f64, s: f64, t: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if s > t {
        return Err(Error::ArgumentOrder(format!("cov_xi1_xi1 needs s <= t, got s={s}, t={t}")));
    }
    if s < 0.0 {
        return Err(Error::InvalidArgument(format!("times must be nonnegative, got s={s}")));
    }
    let lag = gamma * (t - s);
    let a = (-lag).exp();
    let one_minus_a = one_minus_exp(lag);
    Ok(2.0 / (gamma * gamma) * xi1_bracket(gamma * s, a, one_minus_a))
}

/// `cov(ξ1_t, ξ2_h)` for `0 <= t <= h`.
pub fn cov_xi1_xi2(gamma: f64, t: f64, h: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if t > h {
        return Err(Error::ArgumentOrder(format!("cov_xi1_xi2 needs t <= h, got t={t}, h={h}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("times must be nonnegative, got t={t}")));
    }
    // e^{-γ(h-t)} - 2e^{-γh} + e^{-γ(h+t)} = e^{-γh} · 4 sinh²(γt/2)
    let sh = (0.5 * gamma * t).sinh();
    Ok((-gamma * h).exp() * 4.0 * sh * sh / gamma)
}

/// `var ξ2_h = 1 - e^{-2γh}`.
pub fn var_xi2(gamma: f64, h: f64) -> f64 {
    one_minus_exp(2.0 * gamma * h)
}

/// Per-coordinate covariance of `(ξ1_{t1}, ξ1_{t2}, ξ1_h, ξ2_h)`.
#[derive(Clone, Debug)]
pub struct NoiseCov {
    pub gamma: f64,
    pub h: f64,
    pub times: (f64, f64),
    pub cov: Matrix4<f64>,
    pub chol: Matrix4<f64>,
}

pub fn build_noise_cov(gamma: f64, h: f64, t1: f64, t2: f64) -> Result<NoiseCov> {
    check_gamma(gamma)?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be positive, got {h}")));
    }
    for t in [t1, t2] {
        if !(0.0..=h).contains(&t) {
            return Err(Error::InvalidArgument(format!("evaluation time {t} outside [0, {h}]")));
        }
    }
    let ts = [t1, t2, h];
    let mut cov = Matrix4::zeros();
    for i in 0..3 {
        for j in 0..=i {
            let (lo, hi) = if ts[i] <= ts[j] { (ts[i], ts[j]) } else { (ts[j], ts[i]) };
            let c = cov_xi1_xi1(gamma, lo, hi)?;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
        let c = cov_xi1_xi2(gamma, ts[i], h)?;
        cov[(i, 3)] = c;
        cov[(3, i)] = c;
    }
    cov[(3, 3)] = var_xi2(gamma, h);
    let chol = psd_cholesky4(&cov)?;
    Ok(NoiseCov { gamma, h, times: (t1, t2), cov, chol })
}

#[derive(Clone, Debug)]
pub struct JointNoiseDraw {
    pub xi1_t1: DVector<f64>,
    pub xi1_t2: DVector<f64>,
    pub xi1_h: DVector<f64>,
    pub xi2_h: DVector<f64>,
}

pub fn draw_joint_noise<R: Rng + ?Sized>(nc: &NoiseCov, dim: usize, rng: &mut R) -> JointNoiseDraw {
    let mut out = JointNoiseDraw {
        xi1_t1: DVector::zeros(dim),
        xi1_t2: DVector::zeros(dim),
        xi1_h: DVector::zeros(dim),
        xi2_h: DVector::zeros(dim),
    };
    for i in 0..dim {
        let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let y = nc.chol * z;
        out.xi1_t1[i] = y[0];
        out.xi1_t2[i] = y[1];
        out.xi1_h[i] = y[2];
        out.xi2_h[i] = y[3];
    }
    out
}

/// The `(ξ1_h, ξ2_h)` block used by the exponential Euler step.
#[derive(Clone, Copy, Debug)]
pub struct PairNoise {
    pub cov: Matrix2<f64>,
    pub chol: Matrix2<f64>,
}

impl PairNoise {
    pub fn new(gamma: f64, h: f64) -> Result<Self> {
        let nc = build_noise_cov(gamma, h, h, h)?;
        let cov = Matrix2::new(nc.cov[(2, 2)], nc.cov[(2, 3)], nc.cov[(3, 2)], nc.cov[(3, 3)]);
        let c11 = cov[(0, 0)].max(0.0);
        let l11 = c11.sqrt();
        let l21 = if l11 > 0.0 { cov[(1, 0)] / l11 } else { 0.0 };
        let l22 = (cov[(1, 1)] - l21 * l21).max(0.0).sqrt();
        Ok(Self { cov, chol: Matrix2::new(l11, 0.0, l21, l22) })
    }

    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let mut xi1 = DVector::zeros(dim);
        let mut xi2 = DVector::zeros(dim);
        for i in 0..dim {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            xi1[i] = self.chol[(0, 0)] * z0;
            xi2[i] = self.chol[(1, 0)] * z0 + self.chol[(1, 1)] * z1;
        }
        (xi1, xi2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn direct_xi1(gamma: f64, s: f64, t: f64) -> f64 {
        let e = |x: f64| (-x).exp();
        (2.0 / gamma)
            * (s - (1.0 - e(gamma * s) + e(gamma * (t - s)) - e(gamma * t)) / gamma
                + (e(gamma * (t - s)) - e(gamma * (t + s))) / (2.0 * gamma))
    }

    #[test]
    fn stable_forms_agree_with_direct_formulas() {
        for &(g, s, t) in &[(1.0, 0.5, 1.0), (3.0, 0.2, 0.9), (0.5, 1.0, 1.0), (10.0, 0.05, 0.3)] {
            assert_relative_eq!(cov_xi1_xi1(g, s, t).unwrap(), direct_xi1(g, s, t), max_relative = 1e-10);
            let h = t + 0.1;
            let direct = ((-g * (h - t)).exp() - 2.0 * (-g * h).exp() + (-g * (h + t)).exp()) / g;
            assert_relative_eq!(cov_xi1_xi2(g, t, h).unwrap(), direct, max_relative = 1e-12);
        }
        // the series branch agrees with the direct formula at its edge
        let (g, s, t) = (1.0, 0.0999, 0.4);
        assert_relative_eq!(cov_xi1_xi1(g, s, t).unwrap(), direct_xi1(g, s, t), max_relative = 1e-9);
        let (g, s, t) = (1.0, 0.1001, 0.4);
        assert_relative_eq!(cov_xi1_xi1(g, s, t).unwrap(), direct_xi1(g, s, t), max_relative = 1e-9);
    }

    #[test]
    fn zero_time_entries() {
        assert_eq!(cov_xi1_xi1(2.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(cov_xi1_xi2(2.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(var_xi2(2.0, 0.0), 0.0);
    }

    #[test]
    fn argument_order_is_checked() {
        assert!(matches!(cov_xi1_xi1(1.0, 0.5, 0.2), Err(Error::ArgumentOrder(_))));
        assert!(matches!(cov_xi1_xi2(1.0, 0.5, 0.2), Err(Error::ArgumentOrder(_))));
    }

    #[test]
    fn integrated_brownian_limit() {
        let g = 1.0;
        let h = 1e-3;
        let v = cov_xi1_xi1(g, h, h).unwrap() / (2.0 * g / 3.0 * h.powi(3));
        let c = cov_xi1_xi2(g, h, h).unwrap() / (g * h * h);
        assert!((v - 1.0).abs() < 1e-2, "{v}");
        assert!((c - 1.0).abs() < 1e-2, "{c}");
    }

    #[test]
    fn var_xi2_monotone_and_bounded() {
        let mut prev = 0.0;
        for k in 1..200 {
            let v = var_xi2(0.7, k as f64 * 0.05);
            assert!(v > prev && v <= 1.0);
            prev = v;
        }
    }

    #[test]
    fn full_cov_has_exact_corner_and_factor() {
        let nc = build_noise_cov(2.0, 0.3, 0.1, 0.25).unwrap();
        assert_eq!(nc.cov[(3, 3)], var_xi2(2.0, 0.3));
        assert_relative_eq!(nc.cov[(3, 3)], 1.0 - (-1.2f64).exp(), max_relative = 1e-15);
        let back = nc.chol * nc.chol.transpose();
        assert!((back - nc.cov).abs().max() <= 1e-10 * nc.cov.abs().max());
    }

    #[test]
    fn degenerate_times_factor_without_abort() {
        for (t1, t2) in [(0.5, 0.5), (1.0, 1.0), (0.0, 0.0), (1.0, 0.3)] {
            let nc = build_noise_cov(1.5, 1.0, t1, t2).unwrap();
            let back = nc.chol * nc.chol.transpose();
            assert!((back - nc.cov).abs().max() <= 1e-10 * nc.cov.abs().max());
        }
    }

    #[test]
    fn zero_cov_gives_zero_draws() {
        use rand::SeedableRng;
        let nc = NoiseCov {
            gamma: 1.0,
            h: 1.0,
            times: (0.5, 0.5),
            cov: Matrix4::zeros(),
            chol: Matrix4::zeros(),
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let d = draw_joint_noise(&nc, 3, &mut rng);
        assert!(d.xi1_t1.iter().chain(d.xi2_h.iter()).all(|&v| v == 0.0));
    }
}
