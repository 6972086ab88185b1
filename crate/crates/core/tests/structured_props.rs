mod common;

use common::*;
use lqr_core::experiment::gen_lollipop_instance_with;
use lqr_core::linalg::frob_inner;
use lqr_core::structured::lipschitz_at_level;
use lqr_core::{lipschitz_bound, pgd_run, Gain, LqrError, LqrInstance, Matrix, Prng, SparsityPattern, StepMode};
use proptest::prelude::*;

fn random_pattern(prng: &mut Prng, m: usize, n: usize) -> SparsityPattern {
    let mask = nalgebra::DMatrix::from_fn(m, n, |i, j| i == j || prng.uniform() < 0.4);
    SparsityPattern::from_mask(mask).unwrap()
}

fn lollipop(clique: usize, path: usize) -> (LqrInstance, SparsityPattern) {
    let (inst, pattern) = gen_lollipop_instance_with(clique, path, true).unwrap();
    (inst.with_scaled_dynamics(0.9).unwrap(), pattern)
}

/// Gains of the form `K₀ + sE` with `f ≤ f(K₀)`.
fn sublevel_gains(inst: &LqrInstance, k0: &Gain, prng: &mut Prng, count: usize) -> Vec<Gain> {
    let f0 = inst.certify(k0).unwrap().cost;
    let mut out = Vec::new();
    let mut scale = 1.0;
    while out.len() < count {
        let e = random_unit(prng, inst.m(), inst.n());
        let k = Gain::from(k0.as_matrix() + scale * prng.uniform() * e);
        match inst.certify(&k) {
            Ok(c) if c.cost <= f0 => out.push(k),
            _ => scale *= 0.7,
        }
    }
    out
}

#[test]
fn off_pattern_start_is_rejected() {
    let (inst, pattern) = lollipop(3, 2);
    let mut k0 = Matrix::zeros(inst.m(), inst.n());
    k0[(0, inst.n() - 1)] = 0.1;
    let err = pgd_run(&inst, &pattern, &Gain::from(k0), StepMode::FixedL0, 1e-8, 10).unwrap_err();
    assert!(matches!(err, LqrError::PatternViolation { .. }));
}

#[test]
fn lollipop_pgd_stays_structured_and_decreases() {
    let (inst, pattern) = lollipop(4, 3);
    let k0 = Gain::zeros(inst.n(), inst.n());
    let l = lipschitz_bound(&inst, &k0).unwrap().l;
    for mode in [StepMode::FixedL0, StepMode::PerIterL] {
        let trace = pgd_run(&inst, &pattern, &k0, mode, 1e-9, 2000).unwrap();
        let f0 = trace.records[0].f;
        let mut prev = f64::INFINITY;
        let mut best = f64::INFINITY;
        for rec in &trace.records {
            assert_eq!(pattern.off_pattern_mass(&rec.gain).unwrap(), 0.0);
            assert!(rec.rho < 1.0);
            assert!(rec.f <= prev);
            prev = rec.f;
            // Sufficient decrease summed over the run.
            if rec.j > 0 {
                assert!(rec.j as f64 * best <= 2.0 * l * (f0 - rec.f) * (1.0 + 1e-9));
            }
            let pg = rec.proj_grad_norm.unwrap();
            best = best.min(pg * pg);
        }
    }
}

#[test]
fn per_iteration_stepsize_is_never_smaller() {
    let (inst, pattern) = lollipop(3, 3);
    let k0 = Gain::zeros(inst.n(), inst.n());
    let fixed = pgd_run(&inst, &pattern, &k0, StepMode::FixedL0, 1e-9, 50).unwrap();
    let adaptive = pgd_run(&inst, &pattern, &k0, StepMode::PerIterL, 1e-9, 50).unwrap();
    let eta0 = fixed.records[0].eta.unwrap();
    for rec in &adaptive.records {
        if let Some(eta) = rec.eta {
            assert!(eta >= eta0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_an_orthogonal_projector(seed in any::<u64>(), m in 1usize..6, n in 1usize..6) {
        let mut prng = Prng::new(seed);
        let p = random_pattern(&mut prng, m, n);
        let a = prng.normal_matrix(m, n);
        let b = prng.normal_matrix(m, n);
        let pa = p.project(&a).unwrap();
        prop_assert_eq!(&p.project(&pa).unwrap(), &pa);
        prop_assert!((frob_inner(&pa, &b) - frob_inner(&a, &p.project(&b).unwrap())).abs() <= 1e-12 * (1.0 + a.norm() * b.norm()));
        prop_assert!(frob_inner(&(&a - &pa), &pa).abs() <= 1e-12 * (1.0 + a.norm_squared()));
        prop_assert_eq!(p.off_pattern_mass(&pa).unwrap(), 0.0);
        prop_assert!(((&a - &pa).norm() - p.off_pattern_mass(&a).unwrap()).abs() <= 1e-12 * (1.0 + a.norm()));
        let text = serde_json::to_string(&p).unwrap();
        prop_assert_eq!(serde_json::from_str::<SparsityPattern>(&text).unwrap(), p);
    }

    #[test]
    fn restricted_gradient_matches_differences(seed in any::<u64>()) {
        let inst = small_instance(seed);
        let mut prng = Prng::new(seed);
        let pattern = random_pattern(&mut prng, inst.m(), inst.n());
        let opt = inst.optimal_solution(&stabilizing_seed(&inst)).unwrap();
        let k = Gain::from(pattern.project(&(0.3 * opt.k_star.as_matrix())).unwrap());
        let cert = inst.certify(&k).unwrap();
        let e = pattern.project(&random_unit(&mut prng, inst.m(), inst.n())).unwrap();
        prop_assume!(e.norm() > 0.0);
        let h = 1e-6;
        let fd = (cost(&inst, &(k.as_matrix() + h * &e)) - cost(&inst, &(k.as_matrix() - h * &e))) / (2.0 * h);
        let analytic = frob_inner(&pattern.project(&cert.grad).unwrap(), &e);
        prop_assert!(rel_err(fd, analytic, 1e-7 * (1.0 + cert.cost)) <= 1e-5, "fd {fd} analytic {analytic}");
    }

    #[test]
    fn masked_and_projected_updates_coincide(seed in any::<u64>()) {
        let inst = small_instance(seed);
        let mut prng = Prng::new(seed);
        let pattern = random_pattern(&mut prng, inst.m(), inst.n());
        let k0 = Gain::zeros(inst.m(), inst.n());
        let trace = pgd_run(&inst, &pattern, &k0, StepMode::FixedL0, 0.0, 15).unwrap();
        let eta = lipschitz_bound(&inst, &k0).unwrap().eta();
        let mut k = k0.as_matrix().clone();
        for rec in &trace.records {
            prop_assert_eq!(rec.gain.as_matrix(), &k);
            let g = inst.certify(&Gain::from(k.clone())).unwrap().grad;
            let mut next = k.clone();
            for i in 0..k.nrows() {
                for j in 0..k.ncols() {
                    if pattern.allows(i, j) {
                        next[(i, j)] = k[(i, j)] - eta * g[(i, j)];
                    }
                }
            }
            k = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn hessian_bound_is_sound_on_the_sublevel_set(seed in any::<u64>()) {
        let inst = small_instance(seed);
        let mut prng = Prng::new(seed);
        let k0 = stabilizing_seed(&inst);
        let rep = lipschitz_bound(&inst, &k0).unwrap();
        for k in sublevel_gains(&inst, &k0, &mut prng, 5) {
            let e = random_unit(&mut prng, inst.m(), inst.n());
            let form = inst.hessian_form(&k, &e).unwrap();
            prop_assert!(form.abs() <= rep.l, "|H[E,E]| {form} > L {}", rep.l);
            let local = lipschitz_at_level(&inst, inst.certify(&k).unwrap().cost).unwrap();
            prop_assert!(local.l <= rep.l);
        }
    }
}
