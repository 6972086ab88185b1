use std::fs;

use lqr_core::descent::{rate_fit_rows, read_trace_csv};
use lqr_core::experiment::{lollipop_adjacency, metropolis_hastings};
use lqr_core::{
    gen_lollipop_instance, gen_random_instance, run, spectral_radius, Algorithm, ExperimentConfig, FlowKind,
    InstanceSpec, LqrError, LqrInstance, Matrix, Prng, RunSummary, StepMode, Tolerances,
};
use proptest::prelude::*;

fn config(dir: &std::path::Path, algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        instance: InstanceSpec::Random {
            n: 4,
            seed: 3,
            target_rho: 0.9,
        },
        algorithm,
        sigma_scale: 1.0,
        tolerances: Tolerances::default(),
        initial_gain: None,
        output_dir: dir.to_path_buf(),
    }
}

#[test]
fn descent_runs_write_consistent_artifacts() {
    for algorithm in [Algorithm::Gd, Algorithm::Ngd, Algorithm::Qn] {
        let tmp = tempfile::tempdir().unwrap();
        let art = run(&config(tmp.path(), algorithm.clone())).unwrap();
        for p in [&art.config_path, &art.instance_path, &art.trace_path, &art.summary_path] {
            assert!(p.exists(), "{} missing", p.display());
        }
        let summary: RunSummary = serde_json::from_str(&fs::read_to_string(&art.summary_path).unwrap()).unwrap();
        assert_eq!(summary, art.summary);
        let rows = read_trace_csv(fs::File::open(&art.trace_path).unwrap()).unwrap();
        assert_eq!(rows.len(), summary.iterations + 1);
        assert_eq!(rows.last().unwrap().f, summary.f_final);
        assert_eq!(summary.rate_fit, rate_fit_rows(&rows).ok());
        let back: ExperimentConfig = serde_json::from_str(&fs::read_to_string(&art.config_path).unwrap()).unwrap();
        assert_eq!(back.algorithm, algorithm);
        let inst: LqrInstance = serde_json::from_str(&fs::read_to_string(&art.instance_path).unwrap()).unwrap();
        assert_eq!(inst, gen_random_instance(4, 3, 0.9).unwrap());
        assert!(summary.iterations_to_tol.is_some());
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for algorithm in [
        Algorithm::Gd,
        Algorithm::Pgd {
            stepmode: StepMode::PerIterL,
        },
        Algorithm::Flow {
            kind: FlowKind::Natural { gamma: 1.0 },
            t_end: 5.0,
        },
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(&config(a.path(), algorithm.clone())).unwrap();
        run(&config(b.path(), algorithm)).unwrap();
        for name in ["trace.csv", "summary.json", "instance.json"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }
}

#[test]
fn pgd_and_flow_runs_write_their_extras() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), Algorithm::Pgd { stepmode: StepMode::FixedL0 });
    cfg.instance = InstanceSpec::Lollipop {
        clique: 3,
        path: 2,
        target_rho: Some(0.9),
        diag_in_pattern: true,
    };
    let art = run(&cfg).unwrap();
    assert!(art.pattern_path.as_ref().unwrap().exists());
    let header = fs::read_to_string(&art.trace_path).unwrap();
    assert!(header.lines().next().unwrap().ends_with("proj_grad_norm"));

    let tmp = tempfile::tempdir().unwrap();
    let art = run(&config(
        tmp.path(),
        Algorithm::Flow {
            kind: FlowKind::QuasiNewton,
            t_end: 10.0,
        },
    ))
    .unwrap();
    assert!(tmp.path().join("gains.json").exists());
    assert!(art.summary.time_to_tol.is_some());
    assert!(fs::read_to_string(&art.trace_path).unwrap().starts_with("t,V,grad_norm,rho"));
}

#[test]
fn failures_leave_a_record_and_no_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), Algorithm::Gd);
    cfg.instance = InstanceSpec::Lollipop {
        clique: 3,
        path: 2,
        target_rho: None,
        diag_in_pattern: true,
    };
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, LqrError::NotSchurStable { .. }));
    assert!(!tmp.path().join("trace.csv").exists());
    let failure: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("failure.json")).unwrap()).unwrap();
    assert_eq!(failure["algorithm"], "gd");

    cfg.sigma_scale = -1.0;
    assert!(matches!(run(&cfg), Err(LqrError::InvalidInput(_))));
}

#[test]
fn config_json_uses_tagged_enums() {
    let text = r#"{
        "instance": {"type": "lollipop", "clique": 4, "path": 3},
        "algorithm": {"type": "flow", "kind": {"kind": "natural", "gamma": 1.0}, "t_end": 20.0},
        "tolerances": {"gap_tol": 1e-8},
        "output_dir": "out"
    }"#;
    let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
    assert_eq!(cfg.sigma_scale, 1.0);
    assert_eq!(
        cfg.instance,
        InstanceSpec::Lollipop {
            clique: 4,
            path: 3,
            target_rho: Some(0.9),
            diag_in_pattern: true
        }
    );
    assert_eq!(
        cfg.algorithm,
        Algorithm::Flow {
            kind: FlowKind::Natural { gamma: 1.0 },
            t_end: 20.0
        }
    );
    let pgd: Algorithm = serde_json::from_str(r#"{"type": "pgd", "stepmode": "per_iter_L"}"#).unwrap();
    assert_eq!(pgd, Algorithm::Pgd { stepmode: StepMode::PerIterL });
}

#[test]
fn lollipop_weights_are_doubly_stochastic() {
    let (inst, pattern) = gen_lollipop_instance(10, 10).unwrap();
    let a = inst.a();
    assert_eq!(a.nrows(), 20);
    assert_eq!(a, &a.transpose());
    for i in 0..20 {
        assert!((a.row(i).sum() - 1.0).abs() < 1e-14);
        for j in 0..20 {
            assert!(a[(i, j)] >= 0.0);
            if a[(i, j)] != 0.0 {
                assert!(pattern.allows(i, j));
            }
        }
    }
    assert!((spectral_radius(a).unwrap() - 1.0).abs() < 1e-12);
    let adj = lollipop_adjacency(10, 10).unwrap();
    assert_eq!(adj.sum() as usize, 2 * (45 + 1 + 9));
    assert_eq!(pattern.nnz(), 2 * 55 + 20);
    let w = metropolis_hastings(&adj);
    assert!((w[(0, 1)] - 0.1).abs() < 1e-15);
    assert!((w[(9, 10)] - 1.0 / 11.0).abs() < 1e-15);
    assert!((w[(18, 19)] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn prng_streams_are_reproducible() {
    let mut a = Prng::new(42);
    let mut b = Prng::new(42);
    let xs: Vec<f64> = (0..1000).map(|_| a.normal()).collect();
    let ys: Vec<f64> = (0..1000).map(|_| b.normal()).collect();
    assert_eq!(xs, ys);
    let mut c = Prng::new(7);
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|_| c.normal()).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02);
    let mut d = Prng::new(7);
    assert!((0..10_000).map(|_| d.uniform()).all(|u| (0.0..1.0).contains(&u)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_instances_follow_the_recipe(n in 1usize..12, seed in any::<u64>(), rho in 0.1f64..0.99) {
        let inst = gen_random_instance(n, seed, rho).unwrap();
        prop_assert!((spectral_radius(inst.a()).unwrap() - rho).abs() <= 1e-9);
        prop_assert_eq!(inst.b(), &Matrix::identity(n, n));
        prop_assert_eq!(inst.q().as_matrix(), &Matrix::identity(n, n));
        prop_assert_eq!(inst.r().as_matrix(), &Matrix::identity(n, n));
        prop_assert_eq!(inst.sigma().as_matrix(), &Matrix::identity(n, n));
        prop_assert_eq!(gen_random_instance(n, seed, rho).unwrap(), inst);
    }
}
