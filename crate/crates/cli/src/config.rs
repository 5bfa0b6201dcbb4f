//! Config files: a target file for the sampling commands and a params file
//! for the bound calculators. Both are TOML with one section per concern.

use std::path::{Path, PathBuf};

use kinetic_core::bounds::{BudgetTheorem, ConstantsProfile, ErrCase, InitStats, RegimeParams};
use kinetic_core::kernels::{GaussianMoments, InitLaw, PhaseState};
use kinetic_core::potentials::Potential;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_owned(), source })?;
    toml::from_str(&text).map_err(|e| CliError::Parse { path: path.to_owned(), message: e.to_string() })
}

/// `[target]` section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Diagonal quadratic with the given Hessian eigenvalues.
    Gaussian { spectrum: Vec<f64> },
    /// Quadratic with a full symmetric Hessian, given row by row.
    Hessian { rows: Vec<Vec<f64>> },
    /// Quadratic plus `amplitude Σ cos(frequency xᵢ)`.
    Perturbed { rows: Vec<Vec<f64>>, amplitude: f64, frequency: f64 },
    /// The smooth non-convex test target.
    Trig { dim: usize, beta: f64 },
    Zero { dim: usize },
}

fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("hessian must be a non-empty square matrix, got {n} rows")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl TargetSpec {
    pub fn build(&self) -> Result<Potential, CliError> {
        Ok(match self {
            TargetSpec::Gaussian { spectrum } => Potential::make_gaussian(spectrum)?,
            TargetSpec::Hessian { rows } => Potential::from_hessian(matrix(rows)?)?,
            TargetSpec::Perturbed { rows, amplitude, frequency } => {
                Potential::perturbed_quadratic(matrix(rows)?, *amplitude, *frequency)?
            }
            TargetSpec::Trig { dim, beta } => Potential::make_trig_nonconvex(*dim, *beta)?,
            TargetSpec::Zero { dim } => Potential::zero(*dim),
        })
    }
}

/// `[init]` section. Defaults to a standard normal on phase space.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    StandardNormal,
    Point {
        x: Vec<f64>,
        p: Vec<f64>,
    },
    /// The target's Gaussian stationary law (quadratic targets only).
    Stationary,
}

impl InitSpec {
    pub fn build(&self, pot: &Potential) -> Result<InitLaw, CliError> {
        let d = pot.dim();
        Ok(match self {
            InitSpec::StandardNormal => {
                InitLaw::Gaussian(GaussianMoments::new(DVector::zeros(2 * d), DMatrix::identity(2 * d, 2 * d))?)
            }
            InitSpec::Point { x, p } => {
                if x.len() != d || p.len() != d {
                    return Err(CliError::Config(format!("init point must have {d} coordinates in x and p")));
                }
                InitLaw::Point(PhaseState::new(DVector::from_column_slice(x), DVector::from_column_slice(p))?)
            }
            InitSpec::Stationary => InitLaw::Gaussian(GaussianMoments::stationary(pot)?),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetFile {
    pub target: TargetSpec,
    #[serde(default)]
    pub init: InitSpec,
}

impl TargetFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_toml(path)
    }
}

/// Which calculator `bounds` evaluates.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Calculator {
    Harnack,
    HarnackProofIntegral,
    Err,
    CrossReg,
    Budget,
    GaussianKl,
    GaussianW2,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub horizon: f64,
    pub h: f64,
    pub c0: Option<f64>,
    pub a: Option<f64>,
}

impl RegimeSection {
    pub fn params(&self) -> Result<RegimeParams, CliError> {
        let mut p = RegimeParams::new(self.alpha, self.beta, self.gamma, self.horizon, self.h)?;
        if let Some(c0) = self.c0 {
            p.c0 = c0;
        }
        if let Some(a) = self.a {
            p.a = a;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrSection {
    pub case: ErrCase,
    /// One-step weak error.
    pub weak: f64,
    /// One-step strong error.
    pub strong: f64,
    /// Evaluate the semi-convex case interval by interval.
    #[serde(default)]
    pub by_intervals: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossRegSection {
    pub q: f64,
    pub x: Vec<f64>,
    pub xbar: Vec<f64>,
    pub p: Vec<f64>,
    pub pbar: Vec<f64>,
    pub grad: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    pub theorem: BudgetTheorem,
    pub eps: f64,
    pub dim: usize,
    #[serde(default)]
    pub init: InitStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSection {
    pub m1: Vec<f64>,
    pub c1: Vec<Vec<f64>>,
    pub m2: Vec<f64>,
    pub c2: Vec<Vec<f64>>,
}

/// Means and covariances of the two Gaussians.
pub type GaussianPair = (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>);

impl GaussianSection {
    pub fn parts(&self) -> Result<GaussianPair, CliError> {
        Ok((
            DVector::from_column_slice(&self.m1),
            matrix(&self.c1)?,
            DVector::from_column_slice(&self.m2),
            matrix(&self.c2)?,
        ))
    }
}

/// Params file for `bounds`. Only the sections the calculator needs are
/// required.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    pub calculator: Calculator,
    pub regime: Option<RegimeSection>,
    #[serde(default)]
    pub constants: ConstantsProfile,
    pub err: Option<ErrSection>,
    pub cross_reg: Option<CrossRegSection>,
    pub budget: Option<BudgetSection>,
    pub gaussian: Option<GaussianSection>,
}

pub fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] section")))
}

/// Joins relative output paths onto `KLMC_OUT_DIR` when it is set.
pub fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os("KLMC_OUT_DIR") {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_owned(),
    }
}
