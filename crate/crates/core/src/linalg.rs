//! Small dense helpers: semidefinite Cholesky, matrix exponential, quadrature
//! rules and a couple of numerically careful scalar functions.

use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix4};

use crate::error::{Error, Result};

/// Relative pivot tolerances tried in order before giving up on a factorization.
pub const JITTER_LEVELS: [f64; 5] = [1e-14, 1e-13, 1e-12, 1e-11, 1e-10];

/// `1 - exp(-x)` without cancellation.
#[inline]
pub fn one_minus_exp(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `x - (1 - exp(-x))`, accurate for small `x`.
pub fn psi(x: f64) -> f64 {
    if x.abs() < 0.1 {
        // alternating series starting at x^2/2
        let mut term = x * x / 2.0;
        let mut sum = term;
        for k in 3..30 {
            term *= -x / k as f64;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        x - one_minus_exp(x)
    }
}

/// Lower-triangular factor of a symmetric positive semidefinite matrix stored
/// row-major. Pivots within `tol` of zero produce a zero column instead of a
/// failure, so exactly rank-deficient inputs factor cleanly.
fn psd_cholesky_raw(a: &[f64], n: usize, tol: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d > tol {
            let s = d.sqrt();
            l[j * n + j] = s;
            for i in (j + 1)..n {
                let mut v = a[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / s;
            }
        } else if d < -tol {
            return None;
        }
    }
    Some(l)
}

fn factor_with_escalation(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(vec![0.0; n * n]);
    }
    for level in JITTER_LEVELS {
        if let Some(l) = psd_cholesky_raw(a, n, level * scale) {
            return Ok(l);
        }
    }
    Err(Error::NumericalDegeneracy(format!(
        "matrix of size {n} is not positive semidefinite at tolerance {:e}",
        JITTER_LEVELS[JITTER_LEVELS.len() - 1]
    )))
}

pub fn psd_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Matrix(format!("not square: {}x{}", n, a.ncols())));
    }
    let row_major: Vec<f64> = (0..n * n).map(|k| a[(k / n, k % n)]).collect();
    let l = factor_with_escalation(&row_major, n)?;
    Ok(DMatrix::from_row_slice(n, n, &l))
}

pub fn psd_cholesky4(a: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    let mut row_major = [0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            row_major[i * 4 + j] = a[(i, j)];
        }
    }
    let l = factor_with_escalation(&row_major, 4)?;
    Ok(Matrix4::from_row_slice(&l))
}

/// Matrix exponential (scaling and squaring with a Padé approximant).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = a.exp();
    if e.iter().all(|v| v.is_finite()) {
        Ok(e)
    } else {
        Err(Error::Matrix("matrix exponential is not finite".into()))
    }
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Principal square root of a symmetric PSD matrix; tiny negative eigenvalues are clamped.
pub fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

pub fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for (i, (&x, &w)) in GK_NODES.iter().zip(GK_WEIGHTS.iter()).take(7).enumerate() {
        let s = f(c - r * x) + f(c + r * x);
        kronrod += w * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * r, ((kronrod - gauss) * r).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature by recursive bisection.
pub fn integrate_gk<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (whole, _) = gk15(&f, a, b);
    let mut stack = vec![(a, b, 0usize)];
    let mut total = 0.0;
    let abs_floor = 1e-300;
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, err) = gk15(&f, lo, hi);
        let share = (hi - lo).abs() / (b - a).abs();
        if err <= (rel_tol * whole.abs() * share).max(abs_floor) || err <= 1e-15 * v.abs() {
            total += v;
        } else if depth >= 60 {
            return Err(Error::NumericalDegeneracy(format!(
                "adaptive quadrature did not converge on [{lo}, {hi}]"
            )));
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, depth + 1));
            stack.push((lo, mid, depth + 1));
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NumericalDegeneracy("quadrature produced a non-finite value".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_matches_direct_formula_away_from_zero() {
        for x in [0.05f64, 0.0999, 0.1, 0.5, 3.0] {
            let direct = x - 1.0 + (-x).exp();
            assert_relative_eq!(psi(x), direct, max_relative = 1e-12);
        }
        assert_relative_eq!(psi(1e-6), 0.5e-12, max_relative = 1e-6);
    }

    #[test]
    fn cholesky_of_rank_deficient_matrix() {
        // rows 0 and 1 identical
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 2.0, 1.0, 2.0, 2.0, 1.0, 1.0, 1.0, 3.0]);
        let l = psd_cholesky(&a).unwrap();
        let back = &l * l.transpose();
        assert!((back - a).abs().max() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(psd_cholesky(&a).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(16);
        let s: f64 = w.iter().sum();
        assert_relative_eq!(s, 2.0, max_relative = 1e-14);
        let m30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert_relative_eq!(m30, 2.0 / 31.0, max_relative = 1e-12);
    }

    #[test]
    fn gauss_kronrod_handles_peaked_integrand() {
        let v = integrate_gk(|t| 1.0 / (1e-3 + t), 0.0, 1.0, 1e-12).unwrap();
        assert_relative_eq!(v, (1.001f64 / 1e-3).ln(), max_relative = 1e-10);
    }

    #[test]
    fn expm_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let e = expm(&a).unwrap();
        assert_relative_eq!(e[(0, 0)], 1f64.cos(), max_relative = 1e-13);
        assert_relative_eq!(e[(0, 1)], 1f64.sin(), max_relative = 1e-13);
    }
}
