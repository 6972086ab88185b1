//! Instance generators and the experiment runner.

use std::fs;
use std::path::{Path, PathBuf};

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::descent::{
    default_grad_tol, gd_run, ngd_run, qn_run, rate_fit_rows, read_trace_csv, write_trace_csv, IterateTrace,
    RateFit, Termination, DEFAULT_MAX_ITER_GD, DEFAULT_MAX_ITER_NGD, DEFAULT_MAX_ITER_QN,
};
use crate::error::{LqrError, Result};
use crate::flows::{integrate_with_optimum, FlowConfig, FlowKind};
use crate::linalg::{spectral_radius, Matrix, SymMatrix};
use crate::model::{from_rows, Gain, LqrInstance};
use crate::structured::{pgd_run, SparsityPattern, StepMode};

pub const PRNG_NAME: &str = "xoshiro256** (seed_from_u64 via SplitMix64), Box-Muller normals";
pub const DEFAULT_TARGET_RHO: f64 = 0.9;

/// Seeded generator of uniforms and standard normals.
#[derive(Clone, Debug)]
pub struct Prng {
    rng: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            rng: Xoshiro256StarStar::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal; Box–Muller pairs are consumed cosine first.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// `rows × cols` matrix of normals filled row by row.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.normal()).collect();
        Matrix::from_row_slice(rows, cols, &data)
    }
}

fn check_rho(target_rho: f64) -> Result<()> {
    if target_rho > 0.0 && target_rho < 1.0 {
        Ok(())
    } else {
        Err(LqrError::InvalidInput(format!("target_rho must lie in (0, 1), got {target_rho}")))
    }
}

/// Random `A` with i.i.d. standard normal entries rescaled to `ρ(A) = target_rho`,
/// and `B = Q = R = Σ = I`.
pub fn gen_random_instance(n: usize, seed: u64, target_rho: f64) -> Result<LqrInstance> {
    if n == 0 {
        return Err(LqrError::InvalidInput("n must be at least 1".into()));
    }
    check_rho(target_rho)?;
    const ATTEMPTS: u64 = 5;
    for attempt in 0..ATTEMPTS {
        let a = Prng::new(seed.wrapping_add(attempt)).normal_matrix(n, n);
        let rho = spectral_radius(&a)?;
        if rho > 0.0 {
            return LqrInstance::with_identity_sigma(
                a * (target_rho / rho),
                Matrix::identity(n, n),
                SymMatrix::identity(n),
                SymMatrix::identity(n),
            );
        }
    }
    Err(LqrError::InvalidInput(format!(
        "random A had zero spectral radius for {ATTEMPTS} consecutive seeds from {seed}"
    )))
}

fn random_spd(prng: &mut Prng, n: usize, floor: f64) -> SymMatrix {
    let g = prng.normal_matrix(n, n);
    SymMatrix::symmetrize(&g * g.transpose() / n as f64 + floor * Matrix::identity(n, n))
}

/// General instance with normal `A` (scaled to `target_rho`), normal `B` and
/// random positive definite `Q, R, Σ` (Wishart-like plus `0.1·I`).
pub fn gen_random_general_instance(n: usize, m: usize, seed: u64, target_rho: f64) -> Result<LqrInstance> {
    if n == 0 || m == 0 {
        return Err(LqrError::InvalidInput("n and m must be at least 1".into()));
    }
    check_rho(target_rho)?;
    let mut prng = Prng::new(seed);
    let a = prng.normal_matrix(n, n);
    let rho = spectral_radius(&a)?;
    let a = if rho > 0.0 { a * (target_rho / rho) } else { a };
    let b = prng.normal_matrix(n, m);
    let q = random_spd(&mut prng, n, 0.1);
    let r = random_spd(&mut prng, m, 0.1);
    let sigma = random_spd(&mut prng, n, 0.1);
    LqrInstance::new(a, b, q, r, sigma)
}

/// Adjacency matrix (0/1) of the lollipop graph: a complete graph on nodes
/// `0..clique` and a path on `clique..clique+path`, bridged by the edge
/// `(clique − 1, clique)`.
pub fn lollipop_adjacency(clique: usize, path: usize) -> Result<Matrix> {
    if clique < 2 || path < 1 {
        return Err(LqrError::InvalidInput(format!(
            "lollipop needs clique ≥ 2 and path ≥ 1, got ({clique}, {path})"
        )));
    }
    let n = clique + path;
    let mut adj = Matrix::zeros(n, n);
    let mut link = |i: usize, j: usize| {
        adj[(i, j)] = 1.0;
        adj[(j, i)] = 1.0;
    };
    for i in 0..clique {
        for j in i + 1..clique {
            link(i, j);
        }
    }
    for i in clique - 1..n - 1 {
        link(i, i + 1);
    }
    Ok(adj)
}

/// Metropolis–Hastings weights `1/(1 + max(dᵢ, dⱼ))` on edges, with the
/// remaining mass on the diagonal.
pub fn metropolis_hastings(adjacency: &Matrix) -> Matrix {
    let n = adjacency.nrows();
    let deg: Vec<f64> = (0..n).map(|i| adjacency.row(i).iter().filter(|&&v| v != 0.0).count() as f64).collect();
    let mut w = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j && adjacency[(i, j)] != 0.0 {
                w[(i, j)] = 1.0 / (1.0 + deg[i].max(deg[j]));
            }
        }
        let off: f64 = w.row(i).iter().sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Lollipop consensus instance `A = W_MH`, `B = Q = R = Σ = I`, and the graph
/// pattern with self-loops. `ρ(A) = 1`, so `K = 0` is not stabilizing until
/// `A` is rescaled.
pub fn gen_lollipop_instance(clique: usize, path: usize) -> Result<(LqrInstance, SparsityPattern)> {
    gen_lollipop_instance_with(clique, path, true)
}

pub fn gen_lollipop_instance_with(
    clique: usize,
    path: usize,
    diag_in_pattern: bool,
) -> Result<(LqrInstance, SparsityPattern)> {
    let adj = lollipop_adjacency(clique, path)?;
    let n = adj.nrows();
    let inst = LqrInstance::with_identity_sigma(
        metropolis_hastings(&adj),
        Matrix::identity(n, n),
        SymMatrix::identity(n),
        SymMatrix::identity(n),
    )?;
    Ok((inst, SparsityPattern::from_graph(&adj, diag_in_pattern)?))
}

fn default_target_rho() -> f64 {
    DEFAULT_TARGET_RHO
}

fn default_true() -> bool {
    true
}

fn default_sigma_scale() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstanceSpec {
    Random {
        n: usize,
        seed: u64,
        #[serde(default = "default_target_rho")]
        target_rho: f64,
    },
    /// `target_rho = None` keeps the raw Metropolis–Hastings matrix.
    Lollipop {
        clique: usize,
        path: usize,
        #[serde(default = "default_lollipop_rho")]
        target_rho: Option<f64>,
        #[serde(default = "default_true")]
        diag_in_pattern: bool,
    },
    File {
        path: PathBuf,
        #[serde(default)]
        pattern: Option<PathBuf>,
    },
}

fn default_lollipop_rho() -> Option<f64> {
    Some(DEFAULT_TARGET_RHO)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Algorithm {
    Gd,
    Ngd,
    Qn,
    Pgd { stepmode: StepMode },
    Flow { kind: FlowKind, t_end: f64 },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Gd => "gd",
            Algorithm::Ngd => "ngd",
            Algorithm::Qn => "qn",
            Algorithm::Pgd { .. } => "pgd",
            Algorithm::Flow { .. } => "flow",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Stationarity tolerance; defaults to `1e-8 · (1 + f(K₀))`.
    #[serde(default)]
    pub grad_tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// Relative target for "iterations to tolerance": `gap ≤ gap_tol · gap₀`
    /// (descent) or `V ≤ gap_tol · V(0)` (flows). Defaults to `1e-6`.
    #[serde(default)]
    pub gap_tol: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub algorithm: Algorithm,
    #[serde(default = "default_sigma_scale")]
    pub sigma_scale: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Starting gain as row arrays; `K₀ = 0` when absent.
    #[serde(default)]
    pub initial_gain: Option<Vec<Vec<f64>>>,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_scale > 0.0 && self.sigma_scale.is_finite()) {
            return Err(LqrError::InvalidInput(format!(
                "sigma_scale must be positive, got {}",
                self.sigma_scale
            )));
        }
        match &self.instance {
            InstanceSpec::Random { n, target_rho, .. } => {
                if *n == 0 {
                    return Err(LqrError::InvalidInput("n must be at least 1".into()));
                }
                check_rho(*target_rho)?;
            }
            InstanceSpec::Lollipop { target_rho: Some(rho), .. } => check_rho(*rho)?,
            _ => {}
        }
        Ok(())
    }

    fn gap_tol(&self) -> f64 {
        self.tolerances.gap_tol.unwrap_or(1e-6)
    }
}

/// Builds the instance (with `Σ` rescaled) and, when the spec carries one, its
/// sparsity pattern.
pub fn build_instance(spec: &InstanceSpec, sigma_scale: f64) -> Result<(LqrInstance, Option<SparsityPattern>)> {
    let (inst, pattern) = match spec {
        InstanceSpec::Random { n, seed, target_rho } => (gen_random_instance(*n, *seed, *target_rho)?, None),
        InstanceSpec::Lollipop {
            clique,
            path,
            target_rho,
            diag_in_pattern,
        } => {
            let (inst, pattern) = gen_lollipop_instance_with(*clique, *path, *diag_in_pattern)?;
            let inst = match target_rho {
                Some(rho) => inst.with_scaled_dynamics(*rho)?,
                None => inst,
            };
            (inst, Some(pattern))
        }
        InstanceSpec::File { path, pattern } => {
            let inst: LqrInstance = serde_json::from_str(&fs::read_to_string(path)?)?;
            let pattern = match pattern {
                Some(p) => Some(serde_json::from_str(&fs::read_to_string(p)?)?),
                None => None,
            };
            (inst, pattern)
        }
    };
    let inst = if sigma_scale == 1.0 {
        inst
    } else {
        inst.with_sigma(inst.sigma().scale(sigma_scale))?
    };
    Ok((inst, pattern))
}

/// Summary written to `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub n: usize,
    pub m: usize,
    pub prng: String,
    pub f0: f64,
    pub f_star: f64,
    pub f_final: f64,
    /// Descent: number of updates. Flows: number of accepted steps.
    pub iterations: usize,
    pub terminated_by: Option<Termination>,
    pub gap_tol: f64,
    /// First iteration (descent) with `gap ≤ gap_tol · gap₀`.
    pub iterations_to_tol: Option<usize>,
    /// First sampled time (flows) with `V ≤ gap_tol · V(0)`.
    pub time_to_tol: Option<f64>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_error: Option<String>,
    pub final_are_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub output_dir: PathBuf,
    pub config_path: PathBuf,
    pub instance_path: PathBuf,
    pub pattern_path: Option<PathBuf>,
    pub trace_path: PathBuf,
    pub summary_path: PathBuf,
    pub summary: RunSummary,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    algorithm: &'a str,
    error: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs the configured experiment and writes `config.json`,
/// `instance.json`, `trace.csv` and `summary.json` (plus `pattern.json` for
/// projected runs and `gains.json` for flows). On failure a `failure.json` is
/// written instead of the trace.
pub fn run(config: &ExperimentConfig) -> Result<RunArtifact> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    let trace_path = dir.join("trace.csv");
    let summary_path = dir.join("summary.json");
    let failure_path = dir.join("failure.json");
    for stale in [&trace_path, &summary_path, &failure_path] {
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    let config_path = dir.join("config.json");
    write_json(&config_path, config)?;
    match execute(config, dir, &trace_path, &summary_path) {
        Ok((instance_path, pattern_path, summary)) => Ok(RunArtifact {
            output_dir: dir.clone(),
            config_path,
            instance_path,
            pattern_path,
            trace_path,
            summary_path,
            summary,
        }),
        Err(e) => {
            if trace_path.exists() {
                fs::remove_file(&trace_path)?;
            }
            write_json(
                &failure_path,
                &FailureRecord {
                    algorithm: config.algorithm.name(),
                    error: e.to_string(),
                },
            )?;
            Err(e)
        }
    }
}

fn execute(
    config: &ExperimentConfig,
    dir: &Path,
    trace_path: &Path,
    summary_path: &Path,
) -> Result<(PathBuf, Option<PathBuf>, RunSummary)> {
    let (inst, pattern) = build_instance(&config.instance, config.sigma_scale)?;
    let instance_path = dir.join("instance.json");
    write_json(&instance_path, &inst)?;
    let k0 = match &config.initial_gain {
        Some(rows) => Gain::new(from_rows(rows, inst.m(), inst.n(), "initial_gain")?)?,
        None => Gain::zeros(inst.m(), inst.n()),
    };
    let cert0 = inst.certify(&k0)?;
    let opt = inst.optimal_solution(&k0)?;
    let gap_tol = config.gap_tol();
    let grad_tol = config.tolerances.grad_tol.unwrap_or_else(|| default_grad_tol(cert0.cost));
    let max_iter = config.tolerances.max_iter;
    let mut summary = RunSummary {
        algorithm: config.algorithm.name().to_string(),
        n: inst.n(),
        m: inst.m(),
        prng: PRNG_NAME.to_string(),
        f0: cert0.cost,
        f_star: opt.f_star,
        f_final: cert0.cost,
        iterations: 0,
        terminated_by: None,
        gap_tol,
        iterations_to_tol: None,
        time_to_tol: None,
        rate_fit: None,
        rate_fit_error: None,
        final_are_residual: None,
    };
    let mut pattern_path = None;
    let trace: IterateTrace = match &config.algorithm {
        Algorithm::Gd => gd_run(&inst, &k0, grad_tol, max_iter.unwrap_or(DEFAULT_MAX_ITER_GD))?,
        Algorithm::Ngd => ngd_run(&inst, &k0, grad_tol, max_iter.unwrap_or(DEFAULT_MAX_ITER_NGD))?,
        Algorithm::Qn => qn_run(&inst, &k0, grad_tol, max_iter.unwrap_or(DEFAULT_MAX_ITER_QN))?,
        Algorithm::Pgd { stepmode } => {
            let pattern = pattern.unwrap_or_else(|| SparsityPattern::full(inst.m(), inst.n()));
            let path = dir.join("pattern.json");
            write_json(&path, &pattern)?;
            pattern_path = Some(path);
            pgd_run(&inst, &pattern, &k0, *stepmode, grad_tol, max_iter.unwrap_or(DEFAULT_MAX_ITER_GD))?
        }
        Algorithm::Flow { kind, t_end } => {
            let mut cfg = FlowConfig::new(*kind, *t_end);
            cfg.v_stop = Some(gap_tol * 1e-4 * inst.cost_gap(&cert0, &opt));
            let traj = integrate_with_optimum(&inst, &k0, &cfg, &opt)?;
            let mut buf = Vec::new();
            traj.write_csv(&mut buf)?;
            fs::write(trace_path, buf)?;
            let times: Vec<f64> = (0..=10).map(|i| t_end * i as f64 / 10.0).collect();
            write_json(&dir.join("gains.json"), &traj.gains_json(&times))?;
            let last = traj.last();
            summary.f_final = opt.f_star + last.v;
            summary.iterations = traj.samples.len() - 1;
            summary.time_to_tol = traj.time_to(gap_tol * traj.v0());
            summary.final_are_residual = Some(inst.are_residual(&inst.certify(&last.gain)?.x)?);
            write_json(summary_path, &summary)?;
            return Ok((instance_path, pattern_path, summary));
        }
    };
    let mut buf = Vec::new();
    write_trace_csv(&trace, Some(opt.f_star), &mut buf)?;
    fs::write(trace_path, &buf)?;
    let rows = read_trace_csv(fs::File::open(trace_path)?)?;
    match rate_fit_rows(&rows) {
        Ok(fit) => summary.rate_fit = Some(fit),
        Err(e) => summary.rate_fit_error = Some(e.to_string()),
    }
    let last = trace.last();
    summary.f_final = last.f;
    summary.iterations = trace.iterations();
    summary.terminated_by = Some(trace.terminated_by);
    let gap0 = rows[0].gap.unwrap_or(0.0);
    summary.iterations_to_tol = rows.iter().position(|r| r.gap.is_some_and(|g| g <= gap_tol * gap0));
    summary.final_are_residual = Some(inst.are_residual(&inst.certify(&last.gain)?.x)?);
    write_json(summary_path, &summary)?;
    Ok((instance_path, pattern_path, summary))
}
