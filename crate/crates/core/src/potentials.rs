//! Target potentials with declared Hessian bounds `alpha <= ∇²V <= beta`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub enum Kind {
    Quadratic { h: DMatrix<f64> },
    Zero,
    PerturbedQuadratic { h: DMatrix<f64>, amplitude: f64, frequency: f64 },
    TrigNonconvex { beta: f64 },
}

/// Eigen-decomposition of a quadratic Hessian, `H = Q diag(λ) Qᵀ`.
#[derive(Clone, Debug)]
pub struct Spectral {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct Potential {
    dim: usize,
    alpha: f64,
    beta: f64,
    kind: Kind,
    spectral: Option<Spectral>,
}

/// Anything that can hand out gradients. Kernels are generic over this so a
/// counting wrapper can be slotted in.
pub trait Gradient: Sync {
    fn dim(&self) -> usize;
    fn grad(&self, x: &DVector<f64>) -> DVector<f64>;
}

fn is_diagonal(h: &DMatrix<f64>) -> bool {
    (0..h.nrows()).all(|i| (0..h.ncols()).all(|j| i == j || h[(i, j)] == 0.0))
}

fn check_symmetric(h: &DMatrix<f64>) -> Result<()> {
    if h.nrows() != h.ncols() || h.nrows() == 0 {
        return Err(Error::Matrix(format!("Hessian must be square and non-empty, got {}x{}", h.nrows(), h.ncols())));
    }
    let scale = h.abs().max().max(1.0);
    for i in 0..h.nrows() {
        for j in 0..i {
            if (h[(i, j)] - h[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::Matrix(format!("Hessian is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn spectral_of(h: &DMatrix<f64>) -> Spectral {
    let n = h.nrows();
    if is_diagonal(h) {
        return Spectral {
            eigenvalues: (0..n).map(|i| h[(i, i)]).collect(),
            eigenvectors: DMatrix::identity(n, n),
        };
    }
    let eig = h.clone().symmetric_eigen();
    Spectral {
        eigenvalues: eig.eigenvalues.iter().copied().collect(),
        eigenvectors: eig.eigenvectors,
    }
}

impl Potential {
    /// Diagonal quadratic `V(x) = ½ Σ λᵢ xᵢ²`.
    pub fn make_gaussian(spectrum: &[f64]) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::InvalidArgument("spectrum must be non-empty".into()));
        }
        for (index, &value) in spectrum.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidSpectrum { index, value });
            }
        }
        Self::from_hessian(DMatrix::from_diagonal(&DVector::from_column_slice(spectrum)))
    }

    /// Quadratic with an arbitrary symmetric Hessian. Indefinite matrices are
    /// accepted as long as `λ_max >= |λ_min|` (the semi-convex setting).
    pub fn from_hessian(h: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&h)?;
        let spectral = spectral_of(&h);
        let alpha = spectral.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let beta = spectral.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(beta > 0.0) || beta < alpha.abs() {
            return Err(Error::InvalidArgument(format!(
                "need lambda_max > 0 and lambda_max >= |lambda_min|, got [{alpha}, {beta}]"
            )));
        }
        Ok(Self { dim: h.nrows(), alpha, beta, kind: Kind::Quadratic { h }, spectral: Some(spectral) })
    }

    /// `V ≡ 0`. Only meaningful for integrated Brownian motion; carries `alpha = beta = 0`.
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            alpha: 0.0,
            beta: 0.0,
            kind: Kind::Zero,
            spectral: Some(Spectral { eigenvalues: vec![0.0; dim], eigenvectors: DMatrix::identity(dim, dim) }),
        }
    }

    /// `V(x) = ½ xᵀHx + a Σ sin(f xᵢ)`, bounds widened by `a f²`.
    pub fn perturbed_quadratic(h: DMatrix<f64>, amplitude: f64, frequency: f64) -> Result<Self> {
        check_symmetric(&h)?;
        if !(amplitude >= 0.0) || !frequency.is_finite() {
            return Err(Error::InvalidArgument("amplitude must be nonnegative and frequency finite".into()));
        }
        let s = spectral_of(&h);
        let widen = amplitude * frequency * frequency;
        let alpha = s.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min) - widen;
        let beta = s.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max) + widen;
        if !(beta > 0.0) || beta < alpha.abs() {
            return Err(Error::InvalidArgument(format!("perturbation makes bounds [{alpha}, {beta}] inadmissible")));
        }
        Ok(Self { dim: h.nrows(), alpha, beta, kind: Kind::PerturbedQuadratic { h, amplitude, frequency }, spectral: None })
    }

    /// `V(x) = β Σ cos xᵢ`, Hessian eigenvalues in `[-β, β]`, declared `alpha = -β`.
    pub fn make_trig_nonconvex(dim: usize, beta: f64) -> Result<Self> {
        if !(beta > 0.0) || dim == 0 {
            return Err(Error::InvalidArgument(format!("need dim > 0 and beta > 0, got dim={dim}, beta={beta}")));
        }
        Ok(Self { dim, alpha: -beta, beta, kind: Kind::TrigNonconvex { beta }, spectral: None })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn kind(&self) -> &Kind {
        &self.kind
    }

    /// Eigen-data for linear-gradient potentials (quadratic and zero).
    pub fn spectral(&self) -> Option<&Spectral> {
        self.spectral.as_ref()
    }

    /// Hessian of a linear-gradient potential.
    pub fn quadratic_hessian(&self) -> Option<DMatrix<f64>> {
        match &self.kind {
            Kind::Quadratic { h } => Some(h.clone()),
            Kind::Zero => Some(DMatrix::zeros(self.dim, self.dim)),
            _ => None,
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            Kind::Quadratic { h } => 0.5 * x.dot(&(h * x)),
            Kind::Zero => 0.0,
            Kind::PerturbedQuadratic { h, amplitude, frequency } => {
                0.5 * x.dot(&(h * x)) + amplitude * x.iter().map(|v| (frequency * v).sin()).sum::<f64>()
            }
            Kind::TrigNonconvex { beta } => beta * x.iter().map(|v| v.cos()).sum::<f64>(),
        }
    }

    fn grad_impl(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Quadratic { h } => h * x,
            Kind::Zero => DVector::zeros(self.dim),
            Kind::PerturbedQuadratic { h, amplitude, frequency } => {
                h * x + x.map(|v| amplitude * frequency * (frequency * v).cos())
            }
            Kind::TrigNonconvex { beta } => x.map(|v| -beta * v.sin()),
        }
    }

    pub fn hessian_vec(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            Kind::Quadratic { h } => h * v,
            Kind::Zero => DVector::zeros(self.dim),
            Kind::PerturbedQuadratic { h, amplitude, frequency } => {
                let f2 = frequency * frequency;
                h * v - x.zip_map(v, |xi, vi| amplitude * f2 * (frequency * xi).sin() * vi)
            }
            Kind::TrigNonconvex { beta } => x.zip_map(v, |xi, vi| -beta * xi.cos() * vi),
        }
    }

    pub fn hessian_quadform(&self, x: &DVector<f64>, v: &DVector<f64>) -> f64 {
        v.dot(&self.hessian_vec(x, v))
    }
}

impl Gradient for Potential {
    fn dim(&self) -> usize {
        self.dim
    }
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.grad_impl(x)
    }
}

/// Counts gradient evaluations made through it.
pub struct GradCounter<'a, G: Gradient + ?Sized> {
    inner: &'a G,
    count: AtomicU64,
}

impl<'a, G: Gradient + ?Sized> GradCounter<'a, G> {
    pub fn new(inner: &'a G) -> Self {
        Self { inner, count: AtomicU64::new(0) }
    }
    pub fn count(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl<G: Gradient + ?Sized> Gradient for GradCounter<'_, G> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.grad(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvatureReport {
    pub n_samples: usize,
    pub max_lipschitz_ratio: f64,
    pub min_quadform: f64,
    pub max_quadform: f64,
    pub violation: bool,
}

fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = g.norm().max(1e-300);
    let r = radius * rng.gen::<f64>().powf(1.0 / dim as f64);
    g * (r / n)
}

/// Spot-checks the declared curvature bounds on random points in a ball.
pub fn check_curvature<R: Rng + ?Sized>(pot: &Potential, n_samples: usize, radius: f64, rng: &mut R) -> Result<CurvatureReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let d = pot.dim();
    let mut max_ratio: f64 = 0.0;
    let mut qmin = f64::INFINITY;
    let mut qmax = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let x = sample_ball(d, radius, rng);
        let y = sample_ball(d, radius, rng);
        let dist = (&x - &y).norm();
        if dist > 0.0 {
            max_ratio = max_ratio.max((pot.grad(&x) - pot.grad(&y)).norm() / dist);
        }
        let v = sample_ball(d, 1.0, rng);
        let vn = v.norm();
        if vn > 0.0 {
            let q = pot.hessian_quadform(&x, &(v / vn));
            qmin = qmin.min(q);
            qmax = qmax.max(q);
        }
    }
    let tol = 1e-9 * pot.beta().abs().max(pot.alpha().abs()).max(1e-300);
    let violation = max_ratio > pot.beta() * (1.0 + 1e-9) + 1e-300
        || qmin < pot.alpha() - tol
        || qmax > pot.beta() + tol;
    Ok(CurvatureReport { n_samples, max_lipschitz_ratio: max_ratio, min_quadform: qmin, max_quadform: qmax, violation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_construction() {
        let p = Potential::make_gaussian(&[1.0, 1.0]).unwrap();
        assert_eq!((p.alpha(), p.beta()), (1.0, 1.0));
        let x = DVector::from_vec(vec![3.0, -2.0]);
        assert_relative_eq!(p.eval(&x), 0.5 * 13.0);

        let p = Potential::make_gaussian(&[1.0, 100.0]).unwrap();
        assert_eq!((p.alpha(), p.beta()), (1.0, 100.0));
        let g = p.grad(&DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(g.as_slice(), &[1.0, 100.0]);
    }

    #[test]
    fn gaussian_rejects_nonpositive() {
        assert_eq!(
            Potential::make_gaussian(&[1.0, 0.0]).unwrap_err(),
            Error::InvalidSpectrum { index: 1, value: 0.0 }
        );
        assert!(Potential::make_gaussian(&[-1.0]).is_err());
    }

    #[test]
    fn trig_derivatives() {
        let p = Potential::make_trig_nonconvex(1, 1.0).unwrap();
        let zero = DVector::from_vec(vec![0.0]);
        let one = DVector::from_vec(vec![1.0]);
        assert_eq!(p.grad(&zero)[0], 0.0);
        assert_relative_eq!(p.hessian_quadform(&zero, &one), -1.0);
        let pi = DVector::from_vec(vec![std::f64::consts::PI]);
        assert_relative_eq!(p.hessian_quadform(&pi, &one), 1.0);
        assert_eq!(p.alpha(), -1.0);
    }

    #[test]
    fn curvature_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = Potential::make_gaussian(&[1.0, 100.0]).unwrap();
        let r = check_curvature(&q, 1000, 3.0, &mut rng).unwrap();
        assert!(!r.violation && r.max_lipschitz_ratio <= 100.0 * (1.0 + 1e-12));

        let z = Potential::zero(3);
        let r = check_curvature(&z, 100, 3.0, &mut rng).unwrap();
        assert_eq!(r.max_lipschitz_ratio, 0.0);

        let t = Potential::make_trig_nonconvex(3, 2.0).unwrap();
        let r = check_curvature(&t, 1000, 5.0, &mut rng).unwrap();
        assert!(!r.violation && r.min_quadform >= -2.0 && r.max_quadform <= 2.0);

        let t1 = Potential::make_trig_nonconvex(4, 1.0).unwrap();
        let r = check_curvature(&t1, 1000, 10.0, &mut rng).unwrap();
        assert!(r.max_lipschitz_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn perturbed_bounds_are_widened() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let p = Potential::perturbed_quadratic(h, 0.1, 2.0).unwrap();
        assert_relative_eq!(p.alpha(), 0.6);
        assert_relative_eq!(p.beta(), 4.4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(!check_curvature(&p, 2000, 4.0, &mut rng).unwrap().violation);
    }

    #[test]
    fn counter_counts() {
        let p = Potential::make_gaussian(&[1.0]).unwrap();
        let c = GradCounter::new(&p);
        let x = DVector::from_vec(vec![1.0]);
        for _ in 0..5 {
            c.grad(&x);
        }
        assert_eq!(c.count(), 5);
    }
}
