use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lqr_core::descent::{rate_fit_rows, read_trace_csv};
use lqr_core::experiment::{gen_lollipop_instance_with, DEFAULT_TARGET_RHO};
use lqr_core::{
    gen_random_instance, run, Algorithm, ExperimentConfig, FlowKind, InstanceSpec, LqrError, StepMode, Termination,
    Tolerances,
};

#[derive(Parser)]
#[command(name = "lqrpg", version, about = "Policy gradient methods for discrete-time LQR")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Run an algorithm and write its artifacts.
    Run(RunArgs),
    /// Fit a convergence rate to the gap column of a trace CSV.
    Fit {
        trace: PathBuf,
    },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Gaussian A rescaled to a target spectral radius, B = Q = R = Σ = I.
    Random {
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TARGET_RHO)]
        target_rho: f64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metropolis–Hastings matrix of a lollipop graph and its pattern.
    Lollipop {
        #[arg(long, default_value_t = 10)]
        clique: usize,
        #[arg(long, default_value_t = 10)]
        path: usize,
        /// Rescale A to this spectral radius (the raw matrix has radius 1).
        #[arg(long)]
        target_rho: Option<f64>,
        #[arg(long)]
        no_self_loops: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the pattern JSON.
        #[arg(long)]
        pattern_out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Gd,
    Ngd,
    Qn,
    Pgd,
    Flow,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowKindArg {
    Gradient,
    Natural,
    QuasiNewton,
}

#[derive(Args)]
struct RunArgs {
    algorithm: Option<AlgorithmArg>,
    /// Full experiment config as JSON; other flags are ignored except `--out`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Instance JSON file instead of a generated instance.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Pattern JSON for `pgd` with `--instance`.
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Use the lollipop instance with this clique size.
    #[arg(long)]
    clique: Option<usize>,
    #[arg(long, default_value_t = 10)]
    path: usize,
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TARGET_RHO)]
    target_rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma_scale: f64,
    #[arg(long, value_enum, default_value_t = FlowKindArg::Gradient)]
    flow: FlowKindArg,
    /// Natural flow exponent; implies `--flow natural` when given alone.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    t_end: f64,
    /// Stationarity tolerance on the (projected) gradient norm.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Relative gap used for "iterations to tolerance".
    #[arg(long)]
    gap_tol: Option<f64>,
    #[arg(long, default_value = "fixed_L0")]
    stepmode: StepMode,
    /// Starting gain as JSON rows, e.g. `[[1.5]]`; zero when omitted.
    #[arg(long)]
    k0: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, LqrError> {
        if let Some(path) = &self.config {
            let mut cfg: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
            if let Some(out) = &self.out {
                cfg.output_dir = out.clone();
            }
            return Ok(cfg);
        }
        let algorithm = self
            .algorithm
            .ok_or_else(|| LqrError::InvalidInput("an algorithm or --config is required".into()))?;
        let out = self
            .out
            .clone()
            .ok_or_else(|| LqrError::InvalidInput("--out is required without --config".into()))?;
        let instance = if let Some(path) = &self.instance {
            InstanceSpec::File {
                path: path.clone(),
                pattern: self.pattern.clone(),
            }
        } else if let Some(clique) = self.clique {
            InstanceSpec::Lollipop {
                clique,
                path: self.path,
                target_rho: Some(self.target_rho),
                diag_in_pattern: true,
            }
        } else {
            InstanceSpec::Random {
                n: self.n,
                seed: self.seed,
                target_rho: self.target_rho,
            }
        };
        let algorithm = match algorithm {
            AlgorithmArg::Gd => Algorithm::Gd,
            AlgorithmArg::Ngd => Algorithm::Ngd,
            AlgorithmArg::Qn => Algorithm::Qn,
            AlgorithmArg::Pgd => Algorithm::Pgd { stepmode: self.stepmode },
            AlgorithmArg::Flow => {
                let kind = match (self.flow, self.gamma) {
                    (FlowKindArg::Gradient, None) => FlowKind::Gradient,
                    (FlowKindArg::QuasiNewton, _) => FlowKind::QuasiNewton,
                    (_, gamma) => FlowKind::Natural {
                        gamma: gamma.unwrap_or(1.0),
                    },
                };
                Algorithm::Flow { kind, t_end: self.t_end }
            }
        };
        Ok(ExperimentConfig {
            instance,
            algorithm,
            sigma_scale: self.sigma_scale,
            tolerances: Tolerances {
                grad_tol: self.tol,
                max_iter: self.max_iter,
                gap_tol: self.gap_tol,
            },
            initial_gain: self.k0.as_deref().map(serde_json::from_str).transpose()?,
            output_dir: out,
        })
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), LqrError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, format!("{text}\n"))?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn exit_code(err: &LqrError) -> u8 {
    match err {
        LqrError::NotSchurStable { .. } => 2,
        LqrError::NoConvergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn execute(cli: Cli) -> Result<u8, LqrError> {
    match cli.command {
        Command::Gen(GenCommand::Random { n, seed, target_rho, out }) => {
            let inst = gen_random_instance(n, seed, target_rho)?;
            emit(out.as_deref(), &serde_json::to_string_pretty(&inst)?)?;
            Ok(0)
        }
        Command::Gen(GenCommand::Lollipop {
            clique,
            path,
            target_rho,
            no_self_loops,
            out,
            pattern_out,
        }) => {
            let (inst, pattern) = gen_lollipop_instance_with(clique, path, !no_self_loops)?;
            let inst = match target_rho {
                Some(rho) => inst.with_scaled_dynamics(rho)?,
                None => inst,
            };
            emit(out.as_deref(), &serde_json::to_string_pretty(&inst)?)?;
            if let Some(p) = pattern_out {
                emit(Some(&p), &serde_json::to_string(&pattern)?)?;
            }
            Ok(0)
        }
        Command::Run(args) => {
            let artifact = run(&args.config()?)?;
            println!("{}", serde_json::to_string_pretty(&artifact.summary)?);
            Ok(match artifact.summary.terminated_by {
                Some(Termination::MaxIter) => 3,
                _ => 0,
            })
        }
        Command::Fit { trace } => {
            let rows = read_trace_csv(fs::File::open(&trace)?)?;
            let fit = rate_fit_rows(&rows)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(0)
        }
    }
}
