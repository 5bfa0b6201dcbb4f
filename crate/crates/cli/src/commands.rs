use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use kinetic_core::bounds::{
    budget, cross_reg_ulmc, err_bound, err_semiconvex_by_intervals, gaussian_kl, gaussian_w2, harnack_c,
    harnack_proof_integral, ErrCase,
};
use kinetic_core::coupling::{evolve_coupled, girsanov_kl_bound, kl_ibm_exact, Dynamics, OdeOptions, ShiftRule};
use kinetic_core::kernels::{run_replicas, ChainConfig, KernelKind, LastStep, PhaseState};
use kinetic_core::metrics::{fit_exponent, local_error, LocalErrorConfig};
use kinetic_core::potentials::Potential;
use kinetic_core::shifts::{certify_time_grid, lambda_grid, lambda_min_sweep, omega_for, CertPoint, ShiftSchedule};
use kinetic_core::suite::{self, run_suite, SuiteConfig};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use crate::config::{resolve_out, section, BoundsFile, Calculator, TargetFile};
use crate::error::CliError;
use crate::output::{config_hash, csv_body, summary, write_csv};

/// `Ok(false)` means the command ran but a check it makes did not hold.
pub type Outcome = Result<bool, CliError>;

fn out_path(out: &Option<PathBuf>, default: &str) -> PathBuf {
    resolve_out(out.as_deref().unwrap_or(Path::new(default)))
}

fn vector(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    Ulmc,
    RmUlmc,
    Exact,
}

impl From<KernelArg> for KernelKind {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::Ulmc => KernelKind::Ulmc,
            KernelArg::RmUlmc => KernelKind::RmUlmc,
            KernelArg::Exact => KernelKind::ExactGaussian,
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct SampleArgs {
    /// Target file with a [target] and optional [init] section.
    #[arg(long)]
    #[serde(skip)]
    pub target: PathBuf,
    #[arg(long, value_enum)]
    pub kernel: KernelArg,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub h: f64,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub replicas: usize,
    #[arg(long)]
    pub seed: u64,
    /// Record moments every `thin` steps.
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    /// Replace the final step by an exponential Euler step.
    #[arg(long)]
    pub last_ulmc: bool,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SampleRow {
    step: usize,
    replica: usize,
    mean_x_norm: f64,
    cov_trace_x: f64,
    cov_trace_p: f64,
    grad_evals: u64,
}

pub fn sample(a: &SampleArgs) -> Outcome {
    let file = TargetFile::load(&a.target)?;
    let pot = file.target.build()?;
    let init = file.init.build(&pot)?;
    let cfg = ChainConfig {
        gamma: a.gamma,
        h: a.h,
        n_steps: a.steps,
        last_step: if a.last_ulmc { LastStep::Ulmc } else { LastStep::Same },
        seed: a.seed,
        kernel: a.kernel.into(),
    };
    if a.replicas == 0 {
        return Err(CliError::Config("--replicas must be positive".into()));
    }
    let chains = run_replicas(&pot, &init, &cfg, a.replicas, a.thin, false)?;
    let rows = chains.iter().enumerate().flat_map(|(replica, c)| {
        c.records.iter().map(move |r| SampleRow {
            step: r.step,
            replica,
            mean_x_norm: r.mean_x_norm,
            cov_trace_x: r.cov_trace_x,
            cov_trace_p: r.cov_trace_p,
            grad_evals: r.grad_evals,
        })
    });
    let path = out_path(&a.out, "sample.csv");
    write_csv(&path, &config_hash(&("sample", a, &file)), Some(a.seed), &csv_body(rows)?)?;
    let n = chains.len() as f64;
    let mean_x = chains.iter().fold(DVector::zeros(pot.dim()), |acc, c| acc + &c.final_state.x) / n;
    let mut warnings: Vec<&String> = chains.iter().flat_map(|c| &c.warnings).collect();
    warnings.dedup();
    summary(json!({
        "command": "sample",
        "out": path,
        "replicas": chains.len(),
        "grad_evals": chains.iter().map(|c| c.grad_evals).sum::<u64>(),
        "final_ensemble_mean_x_norm": mean_x.norm(),
        "warnings": warnings,
    }));
    Ok(true)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Ulmc,
    RmUlmc,
}

#[derive(Args, Debug, Serialize)]
pub struct LocalErrorArgs {
    #[arg(long)]
    #[serde(skip)]
    pub target: PathBuf,
    #[arg(long, value_enum)]
    pub kernel: SchemeArg,
    #[arg(long)]
    pub gamma: f64,
    /// Comma-separated step sizes, largest first.
    #[arg(long, value_delimiter = ',', required = true)]
    pub h_grid: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    /// Reference substeps per step.
    #[arg(long, default_value_t = 256)]
    pub kref: usize,
    /// Midpoint draws per path for the randomized midpoint kernel.
    #[arg(long, default_value_t = 64)]
    pub resample: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct LocalErrorRow {
    h: f64,
    pos_strong: f64,
    mom_strong: f64,
    pos_weak: f64,
    mom_weak: f64,
    pos_strong_se: f64,
    mom_strong_se: f64,
    pos_weak_se: f64,
    mom_weak_se: f64,
}

pub fn local_error_cmd(a: &LocalErrorArgs) -> Outcome {
    let file = TargetFile::load(&a.target)?;
    let pot = file.target.build()?;
    let init = file.init.build(&pot)?;
    let kernel = match a.kernel {
        SchemeArg::Ulmc => KernelKind::Ulmc,
        SchemeArg::RmUlmc => KernelKind::RmUlmc,
    };
    let mut rows = Vec::with_capacity(a.h_grid.len());
    let mut warnings = Vec::new();
    for &h in &a.h_grid {
        let mut cfg = LocalErrorConfig::new(kernel, a.gamma, h, a.paths, a.seed);
        cfg.k_ref = a.kref;
        cfg.n_resample = a.resample;
        let e = local_error(&pot, &init, &cfg)?;
        warnings.extend(e.warnings.iter().map(|w| format!("h = {h}: {w}")));
        rows.push(LocalErrorRow {
            h,
            pos_strong: e.pos_strong,
            mom_strong: e.mom_strong,
            pos_weak: e.pos_weak,
            mom_weak: e.mom_weak,
            pos_strong_se: e.pos_strong_se,
            mom_strong_se: e.mom_strong_se,
            pos_weak_se: e.pos_weak_se,
            mom_weak_se: e.mom_weak_se,
        });
    }
    // exponents only when the grid supports a fit
    let fit = |f: fn(&LocalErrorRow) -> f64| {
        let errs: Vec<f64> = rows.iter().map(f).collect();
        fit_exponent(&a.h_grid, &errs).ok().map(|f| json!({ "exponent": f.exponent, "r_squared": f.r_squared }))
    };
    let exponents = json!({
        "pos_strong": fit(|r| r.pos_strong),
        "mom_strong": fit(|r| r.mom_strong),
        "pos_weak": fit(|r| r.pos_weak),
        "mom_weak": fit(|r| r.mom_weak),
    });
    let path = out_path(&a.out, "local-error.csv");
    write_csv(&path, &config_hash(&("local-error", a, &file)), Some(a.seed), &csv_body(&rows)?)?;
    summary(json!({ "command": "local-error", "out": path, "exponents": exponents, "warnings": warnings }));
    Ok(true)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Twisted distance along the shifted coupling.
    Contraction,
    /// Girsanov energy bound on the endpoint KL.
    Girsanov,
    /// Integrated Brownian motion with the optimal shift, against the exact KL.
    IbmExact,
}

#[derive(Args, Debug, Serialize)]
pub struct CouplingArgs {
    #[arg(long, value_enum)]
    pub mode: CouplingMode,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 4.0)]
    pub beta: f64,
    /// Defaults to sqrt(32 beta).
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 192.0)]
    pub c0: f64,
    /// Offset of the modified schedule in units of `--h`; 0 keeps the
    /// continuous schedule.
    #[arg(long = "A", default_value_t = 0.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    /// RK4 step.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Initial position gap, comma-separated; its length sets the dimension.
    #[arg(long, value_delimiter = ',', default_value = "1,-1", allow_negative_numbers = true)]
    pub dx: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.5", allow_negative_numbers = true)]
    pub dp: Vec<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CouplingRow {
    t: f64,
    twisted_dist: f64,
    energy: f64,
}

/// Quadratic with eigenvalues spread evenly over `[α, β]`.
fn spread_quadratic(alpha: f64, beta: f64, dim: usize) -> Result<Potential, CliError> {
    let eig: Vec<f64> = (0..dim)
        .map(|i| if dim == 1 { beta } else { alpha + (beta - alpha) * i as f64 / (dim - 1) as f64 })
        .collect();
    Ok(Potential::from_hessian(DMatrix::from_diagonal(&vector(&eig)))?)
}

pub fn coupling(a: &CouplingArgs) -> Outcome {
    let dim = a.dx.len();
    if dim == 0 || a.dp.len() != dim {
        return Err(CliError::Config(format!("--dx and --dp need the same positive length, got {dim} and {}", a.dp.len())));
    }
    let gamma = a.gamma.unwrap_or((32.0 * a.beta).sqrt());
    let main = PhaseState::new(vector(&a.dx), vector(&a.dp))?;
    let aux = PhaseState::zeros(dim);
    let pot = spread_quadratic(a.alpha, a.beta, dim)?;
    let rule = match a.mode {
        CouplingMode::IbmExact => ShiftRule::OptimalIbm { gamma, horizon: a.horizon },
        _ => {
            let omega = omega_for(a.alpha, a.beta, gamma)?;
            let h = if a.a > 0.0 { a.h } else { 0.0 };
            ShiftRule::Schedule(ShiftSchedule::modified(omega, a.c0, a.a, a.horizon, h, gamma)?)
        }
    };
    let dynamics = match a.mode {
        CouplingMode::IbmExact => Dynamics::IntegratedBm,
        _ => Dynamics::Uld(&pot),
    };
    let (records, extra) = match a.mode {
        CouplingMode::Contraction => {
            let t_stop = if a.a > 0.0 { a.horizon } else { a.horizon * (1.0 - 1e-3) };
            let tr = evolve_coupled(dynamics, &rule, &main, &aux, &OdeOptions::new(a.dt, t_stop))?;
            let (first, last) = (&tr.records[0], &tr.records[tr.records.len() - 1]);
            let extra = json!({ "t_end": last.t, "distance_ratio": last.twisted_dist / first.twisted_dist });
            (tr.records, extra)
        }
        CouplingMode::Girsanov | CouplingMode::IbmExact => {
            let g = girsanov_kl_bound(dynamics, &rule, &main, &aux, a.dt)?;
            let mut extra = json!({
                "kl_bound": g.kl_bound,
                "tail": g.tail,
                "truncation_warning": g.truncation_warning,
            });
            if let CouplingMode::IbmExact = a.mode {
                let exact = kl_ibm_exact(gamma, a.horizon, &main.x, &main.p)?;
                extra["kl_exact"] = json!(exact);
                extra["relative_gap"] = json!((g.kl_bound - exact).abs() / exact);
            }
            (g.trajectory.records, extra)
        }
    };
    let rows = records.iter().map(|r| CouplingRow { t: r.t, twisted_dist: r.twisted_dist, energy: r.energy });
    let path = out_path(&a.out, "coupling.csv");
    write_csv(&path, &config_hash(&("coupling", a)), None, &csv_body(rows)?)?;
    summary(json!({ "command": "coupling", "out": path, "gamma": gamma, "result": extra }));
    Ok(true)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeArg {
    Strong,
    Weak,
    Semiconvex,
}

#[derive(Args, Debug, Serialize)]
pub struct CertifyArgs {
    #[arg(long, value_enum)]
    pub regime: RegimeArg,
    #[arg(long, default_value_t = 192.0)]
    pub c0: f64,
    /// Offset of the modified schedule in units of `--h`.
    #[arg(long = "A", default_value_t = 0.0)]
    pub a: f64,
    #[arg(long, default_value_t = 0.01)]
    pub h: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Time grid points.
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    /// Eigenvalue grid points on [α, β].
    #[arg(long, default_value_t = 65)]
    pub lambdas: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn certify(a: &CertifyArgs) -> Outcome {
    let [strong, weak, semi] = suite::regimes();
    let (alpha, beta, gamma) = match a.regime {
        RegimeArg::Strong => strong,
        RegimeArg::Weak => weak,
        RegimeArg::Semiconvex => semi,
    };
    let h = if a.a > 0.0 { a.h } else { 0.0 };
    let sched = ShiftSchedule::modified(omega_for(alpha, beta, gamma)?, a.c0, a.a, a.horizon, h, gamma)?;
    let points = lambda_min_sweep(&sched, &certify_time_grid(a.horizon, a.grid), &lambda_grid(alpha, beta, a.lambdas))?;
    // worst eigenvalue per time
    let mut worst: Vec<CertPoint> = Vec::new();
    for p in points {
        match worst.last_mut() {
            Some(w) if w.t == p.t => {
                if p.slack < w.slack {
                    *w = p;
                }
            }
            _ => worst.push(p),
        }
    }
    let violates = |p: &CertPoint| p.slack < -1e-12 * p.bound.abs().max(1.0);
    let violations = worst.iter().filter(|p| violates(p)).count();
    let min = worst.iter().min_by(|x, y| x.slack.total_cmp(&y.slack)).cloned();
    let path = out_path(&a.out, "certify.csv");
    write_csv(&path, &config_hash(&("certify", a)), None, &csv_body(&worst)?)?;
    summary(json!({
        "command": "certify",
        "out": path,
        "regime": { "alpha": alpha, "beta": beta, "gamma": gamma },
        "times": worst.len(),
        "violations": violations,
        "worst": min,
    }));
    Ok(violations == 0)
}

#[derive(Args, Debug, Serialize)]
pub struct BoundsArgs {
    /// Params file naming the calculator and its inputs.
    #[arg(long)]
    pub params: PathBuf,
}

pub fn bounds(a: &BoundsArgs) -> Outcome {
    let f: BoundsFile = crate::config::read_toml(&a.params)?;
    let k = &f.constants;
    let regime = || section(&f.regime, "regime").and_then(|r| r.params());
    let result = match f.calculator {
        Calculator::Harnack => json!(harnack_c(&regime()?, k)?),
        Calculator::HarnackProofIntegral => json!(harnack_proof_integral(&regime()?, k)?),
        Calculator::Err => {
            let e = section(&f.err, "err")?;
            let p = regime()?;
            if e.by_intervals {
                if e.case != ErrCase::SemiConvex {
                    return Err(CliError::Config("by_intervals applies to the semi-convex case only".into()));
                }
                json!(err_semiconvex_by_intervals(&p, k, e.weak, e.strong)?)
            } else {
                json!(err_bound(&p, k, e.weak, e.strong, e.case)?)
            }
        }
        Calculator::CrossReg => {
            let c = section(&f.cross_reg, "cross_reg")?;
            json!(cross_reg_ulmc(
                &regime()?,
                k,
                &vector(&c.x),
                &vector(&c.xbar),
                &vector(&c.p),
                &vector(&c.pbar),
                &vector(&c.grad),
                c.q
            )?)
        }
        Calculator::Budget => {
            let b = section(&f.budget, "budget")?;
            json!(budget(b.theorem, b.eps, &regime()?, b.dim, &b.init, k)?)
        }
        Calculator::GaussianKl | Calculator::GaussianW2 => {
            let (m1, c1, m2, c2) = section(&f.gaussian, "gaussian")?.parts()?;
            match f.calculator {
                Calculator::GaussianKl => json!(gaussian_kl(&m1, &c1, &m2, &c2)?),
                _ => json!(gaussian_w2(&m1, &c1, &m2, &c2)?),
            }
        }
    };
    summary(json!({ "command": "bounds", "calculator": f.calculator, "result": result }));
    Ok(true)
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteArg {
    Primary,
}

#[derive(Args, Debug, Serialize)]
pub struct AcceptArgs {
    #[arg(long, value_enum, default_value = "primary")]
    pub suite: SuiteArg,
    /// Comma-separated criterion numbers; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub only: Vec<u8>,
    #[arg(long, default_value_t = 20261016)]
    pub seed: u64,
    /// Directory for the per-criterion tables.
    #[arg(long)]
    #[serde(skip)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct AcceptRow<'a> {
    id: u8,
    name: &'a str,
    passed: bool,
    summary: &'a str,
}

pub fn accept(a: &AcceptArgs, threads: Option<usize>) -> Outcome {
    let mut cfg = SuiteConfig::new(a.seed);
    cfg.only = a.only.clone();
    if let Some(t) = threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    let outcomes = run_suite(&cfg)?;
    let dir = out_path(&a.out_dir, "acceptance");
    let hash = config_hash(&("accept", a));
    for o in &outcomes {
        eprintln!("{}", o.line());
        let path = dir.join(format!("criterion-{:02}-{}.csv", o.id, o.name));
        write_csv(&path, &hash, Some(a.seed), &o.table.to_csv())?;
    }
    let rows = outcomes.iter().map(|o| AcceptRow { id: o.id, name: o.name, passed: o.passed, summary: &o.summary });
    write_csv(&dir.join("summary.csv"), &hash, Some(a.seed), &csv_body(rows)?)?;
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    summary(json!({
        "command": "accept",
        "out_dir": dir,
        "passed": outcomes.len() - failed.len(),
        "total": outcomes.len(),
        "failed": failed,
    }));
    Ok(failed.is_empty())
}
