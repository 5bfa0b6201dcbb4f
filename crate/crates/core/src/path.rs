//! A Brownian path over one step `[0, h]`, sampled exactly on an arbitrary
//! grid, from which every step noise and the exact linear flow can be read off.
//!
//! Per basis coordinate with curvature `λ`, each grid interval of length `δ`
//! carries the Gaussian vector
//!
//! ```text
//! y = ∫ e^{F(δ - r)} b dB_r,   F = diag(0, -γ, A_λ),   A_λ = [[0, 1], [-λ, -γ]],
//! b = (1, sqrt(2γ), 0, sqrt(2γ))
//! ```
//!
//! i.e. the Brownian increment, `ξ2` over the interval, and the noise part of
//! the exact flow of `dX = P dt, dP = -λX dt - γP dt + sqrt(2γ) dB`. Intervals
//! compose through `y_{I1 ∪ I2} = e^{F δ2} y_{I1} + y_{I2}`, and
//! `ξ1_t = sqrt(2/γ) B_t - ξ2_t / γ`.
//!
//! For linear-gradient targets the basis is the Hessian eigenbasis and the
//! flow components give the exact transition driven by the same path. For
//! other targets only the first two components are used.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::PhaseState;
use crate::linalg::{gauss_legendre_16, psd_cholesky4};
use crate::potentials::Potential;

/// `e^{A s}` for `A = [[0, 1], [-λ, -γ]]`, evaluated through the entire
/// functions `cosh(√D s)` and `sinh(√D s)/√D` of `D = γ²/4 - λ`.
pub fn exp_a(gamma: f64, lambda: f64, s: f64) -> Matrix2<f64> {
    let tau = -0.5 * gamma;
    let disc = 0.25 * gamma * gamma - lambda;
    let z = disc * s * s;
    let (c, sinc) = if z.abs() < 1.0 {
        let (mut c, mut sn) = (1.0, 1.0);
        let (mut tc, mut ts) = (1.0, 1.0);
        for k in 1..30 {
            tc *= z / ((2 * k - 1) * (2 * k)) as f64;
            ts *= z / ((2 * k) * (2 * k + 1)) as f64;
            c += tc;
            sn += ts;
            if tc.abs() < 1e-18 && ts.abs() < 1e-18 {
                break;
            }
        }
        (c, sn)
    } else if z > 0.0 {
        let r = z.sqrt();
        (r.cosh(), r.sinh() / r)
    } else {
        let r = (-z).sqrt();
        (r.cos(), r.sin() / r)
    };
    let sh = s * sinc;
    let e = (tau * s).exp();
    e * Matrix2::new(c + sh * 0.5 * gamma, sh, -lambda * sh, c - sh * 0.5 * gamma)
}

fn kernel_vector(gamma: f64, lambda: f64, s: f64) -> Vector4<f64> {
    let r = (2.0 * gamma).sqrt();
    let ea = exp_a(gamma, lambda, s);
    Vector4::new(1.0, r * (-gamma * s).exp(), r * ea[(0, 1)], r * ea[(1, 1)])
}

/// `e^{F δ}`.
pub fn interval_transition(gamma: f64, lambda: f64, delta: f64) -> Matrix4<f64> {
    let ea = exp_a(gamma, lambda, delta);
    let mut m = Matrix4::zeros();
    m[(0, 0)] = 1.0;
    m[(1, 1)] = (-gamma * delta).exp();
    m[(2, 2)] = ea[(0, 0)];
    m[(2, 3)] = ea[(0, 1)];
    m[(3, 2)] = ea[(1, 0)];
    m[(3, 3)] = ea[(1, 1)];
    m
}

/// `∫_0^δ g(s) g(s)ᵀ ds` with `g(s) = e^{F s} b`, by composite Gauss–Legendre.
pub fn interval_cov(gamma: f64, lambda: f64, delta: f64) -> Matrix4<f64> {
    let (nodes, weights) = gauss_legendre_16();
    let rate = gamma.max(lambda.abs().sqrt()).max(1e-300);
    let panels = ((rate * delta).ceil() as usize).max(1);
    let width = delta / panels as f64;
    let mut q = Matrix4::zeros();
    for k in 0..panels {
        let lo = k as f64 * width;
        for (x, w) in nodes.iter().zip(weights) {
            let s = lo + 0.5 * width * (x + 1.0);
            let g = kernel_vector(gamma, lambda, s);
            q += g * g.transpose() * (0.5 * width * w);
        }
    }
    q
}

#[derive(Clone, Debug)]
pub struct PathBasis {
    gamma: f64,
    lambdas: Vec<f64>,
    /// original = rotation · basis; `None` means identity.
    rotation: Option<DMatrix<f64>>,
    exact: bool,
    classes: Vec<usize>,
    class_lambdas: Vec<f64>,
}

impl PathBasis {
    fn build(gamma: f64, lambdas: Vec<f64>, rotation: Option<DMatrix<f64>>, exact: bool) -> Self {
        let mut class_lambdas: Vec<f64> = Vec::new();
        let classes = lambdas
            .iter()
            .map(|&l| match class_lambdas.iter().position(|&c| c == l) {
                Some(k) => k,
                None => {
                    class_lambdas.push(l);
                    class_lambdas.len() - 1
                }
            })
            .collect();
        Self { gamma, lambdas, rotation, exact, classes, class_lambdas }
    }

    /// Identity basis without flow components; suitable for any target.
    pub fn generic(gamma: f64, dim: usize) -> Self {
        Self::build(gamma, vec![0.0; dim], None, false)
    }

    /// Eigenbasis for linear-gradient targets, generic otherwise.
    pub fn for_potential(gamma: f64, pot: &Potential) -> Self {
        match pot.spectral() {
            Some(s) => {
                let n = s.eigenvalues.len();
                let identity = s.eigenvectors == DMatrix::<f64>::identity(n, n);
                let rotation = if identity { None } else { Some(s.eigenvectors.clone()) };
                Self::build(gamma, s.eigenvalues.clone(), rotation, true)
            }
            None => Self::generic(gamma, pot.dim()),
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }
    pub fn is_exact(&self) -> bool {
        self.exact
    }

    fn to_original(&self, v: DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            Some(r) => r * v,
            None => v,
        }
    }

    fn to_basis(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.rotation {
            Some(r) => r.tr_mul(v),
            None => v.clone(),
        }
    }

    /// Samples a path on `times` (sorted, starting at 0, strictly increasing).
    pub fn sample<R: Rng + ?Sized>(&self, times: Vec<f64>, rng: &mut R) -> Result<BrownianPath<'_>> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidArgument("path grid must start at 0 and have at least two points".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("path grid must be strictly increasing".into()));
        }
        let d = self.dim();
        let n = times.len() - 1;
        let mut incr = Vec::with_capacity(n * d);
        let mut factors = vec![Matrix4::zeros(); self.class_lambdas.len()];
        for j in 0..n {
            let delta = times[j + 1] - times[j];
            for (c, &l) in self.class_lambdas.iter().enumerate() {
                factors[c] = psd_cholesky4(&interval_cov(self.gamma, l, delta))?;
            }
            for i in 0..d {
                let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                incr.push(factors[self.classes[i]] * z);
            }
        }
        Ok(BrownianPath { basis: self, times, incr })
    }
}

/// Uniform grid `j h / k` with extra points merged in. Extras within
/// `1e-12 h` of an existing point replace it.
pub fn step_grid(h: f64, k: usize, extra: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=k.max(1)).map(|j| h * j as f64 / k.max(1) as f64).collect();
    pts[k.max(1)] = h;
    let tol = 1e-12 * h;
    for &e in extra {
        let e = e.clamp(0.0, h);
        match pts.iter().position(|&p| (p - e).abs() <= tol) {
            Some(pos) => {
                if pos != 0 && pos != pts.len() - 1 {
                    pts[pos] = e;
                }
            }
            None => pts.push(e),
        }
    }
    pts.sort_by(f64::total_cmp);
    pts
}

#[derive(Clone, Debug)]
pub struct BrownianPath<'b> {
    basis: &'b PathBasis,
    times: Vec<f64>,
    incr: Vec<Vector4<f64>>,
}

impl<'b> BrownianPath<'b> {
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn basis(&self) -> &'b PathBasis {
        self.basis
    }
    pub fn n_intervals(&self) -> usize {
        self.times.len() - 1
    }
    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Grid index of `t` (matched to `1e-12` relative to the horizon).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-12 * self.horizon();
        let pos = self.times.partition_point(|&p| p < t - tol);
        (pos < self.times.len() && (self.times[pos] - t).abs() <= tol).then_some(pos)
    }

    /// Accumulated `Y(t_m)` at every grid point, layout `m * d + i`.
    pub fn cumulative(&self) -> Vec<Vector4<f64>> {
        let d = self.basis.dim();
        let n = self.n_intervals();
        let mut out = vec![Vector4::zeros(); (n + 1) * d];
        for j in 0..n {
            let delta = self.times[j + 1] - self.times[j];
            for (c, &l) in self.basis.class_lambdas.iter().enumerate() {
                let tr = interval_transition(self.basis.gamma, l, delta);
                for i in (0..d).filter(|&i| self.basis.classes[i] == c) {
                    out[(j + 1) * d + i] = tr * out[j * d + i] + self.incr[j * d + i];
                }
            }
        }
        out
    }

    fn xi_from(&self, ys: impl Fn(usize) -> Vector4<f64>) -> (DVector<f64>, DVector<f64>) {
        let g = self.basis.gamma;
        let r = (2.0 / g).sqrt();
        let d = self.basis.dim();
        let xi1 = DVector::from_fn(d, |i, _| {
            let y = ys(i);
            r * y[0] - y[1] / g
        });
        let xi2 = DVector::from_fn(d, |i, _| ys(i)[1]);
        (self.basis.to_original(xi1), self.basis.to_original(xi2))
    }

    /// `(ξ1_t, ξ2_t)` at grid index `m`, in original coordinates.
    pub fn xi_at(&self, cum: &[Vector4<f64>], m: usize) -> (DVector<f64>, DVector<f64>) {
        let d = self.basis.dim();
        self.xi_from(|i| cum[m * d + i])
    }

    /// `(ξ1, ξ2)` of interval `j` alone (started afresh at its left end).
    pub fn interval_xi(&self, j: usize) -> (DVector<f64>, DVector<f64>) {
        let d = self.basis.dim();
        self.xi_from(|i| self.incr[j * d + i])
    }

    /// Exact linear flow from `s0` over the whole path, driven by it.
    pub fn exact_endpoint(&self, cum: &[Vector4<f64>], s0: &PhaseState) -> Result<PhaseState> {
        if !self.basis.exact {
            return Err(Error::InvalidArgument("exact flow needs a linear-gradient target basis".into()));
        }
        let d = self.basis.dim();
        let n = self.n_intervals();
        let h = self.horizon();
        let xb = self.basis.to_basis(&s0.x);
        let pb = self.basis.to_basis(&s0.p);
        let mut x = DVector::zeros(d);
        let mut p = DVector::zeros(d);
        for i in 0..d {
            let ea = exp_a(self.basis.gamma, self.basis.lambdas[i], h);
            let y = cum[n * d + i];
            x[i] = ea[(0, 0)] * xb[i] + ea[(0, 1)] * pb[i] + y[2];
            p[i] = ea[(1, 0)] * xb[i] + ea[(1, 1)] * pb[i] + y[3];
        }
        Ok(PhaseState { x: self.basis.to_original(x), p: self.basis.to_original(p) })
    }

    /// Merges intervals, keeping grid points for which `keep` is true (the
    /// endpoints are always kept).
    pub fn coarsen(&self, keep: impl Fn(f64) -> bool) -> BrownianPath<'b> {
        let d = self.basis.dim();
        let n = self.n_intervals();
        let mut times = vec![0.0];
        let mut incr = Vec::new();
        let mut acc = vec![Vector4::zeros(); d];
        for j in 0..n {
            let delta = self.times[j + 1] - self.times[j];
            for i in 0..d {
                let tr = interval_transition(self.basis.gamma, self.basis.lambdas[i], delta);
                acc[i] = tr * acc[i] + self.incr[j * d + i];
            }
            let t = self.times[j + 1];
            if j + 1 == n || keep(t) {
                times.push(t);
                incr.extend(acc.iter().copied());
                acc.iter_mut().for_each(|a| *a = Vector4::zeros());
            }
        }
        BrownianPath { basis: self.basis, times, incr }
    }
}
