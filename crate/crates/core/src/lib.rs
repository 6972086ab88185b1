//! Policy optimization for discrete-time LQR over the set of stabilizing gains.

pub mod descent;
pub mod error;
pub mod experiment;
pub mod flows;
pub mod linalg;
pub mod model;
pub mod structured;

pub use descent::{
    gd_run, gd_run_constant, gd_stepsize, gd_stepsize_floor, ngd_run, qn_run, rate_fit, rate_fit_gaps, IterateTrace,
    RateFit, RateKind, StepsizeFloor, StepsizeReport, Termination, TraceRecord,
};
pub use error::{LqrError, Result};
pub use experiment::{
    gen_lollipop_instance, gen_random_general_instance, gen_random_instance, run, Algorithm, ExperimentConfig,
    InstanceSpec, Prng, RunArtifact, RunSummary, Tolerances,
};
pub use flows::{flow_rhs, integrate, FlowConfig, FlowKind, FlowSample, FlowTrajectory};
pub use linalg::{loewner_margin, solve_stein, spectral_norm, spectral_radius, Matrix, SteinMethod, SymMatrix};
pub use model::{DominanceBound, Gain, HessianOperator, LqrInstance, OptimalSolution, ValueCertificate};
pub use structured::{lipschitz_bound, pgd_run, LipschitzReport, SparsityPattern, StepMode};
