#![allow(dead_code)]

use lqr_core::{gen_random_general_instance, Gain, LqrInstance, Matrix, Prng, SymMatrix};
use nalgebra::dmatrix;

pub const PHI: f64 = 1.618_033_988_749_895;

/// `a = 2, b = q = r = σ = 1`.
pub fn golden() -> LqrInstance {
    LqrInstance::with_identity_sigma(dmatrix![2.0], dmatrix![1.0], SymMatrix::identity(1), SymMatrix::identity(1))
        .unwrap()
}

/// Closed-form scalar cost `(q + r k²) σ / (1 − (a − b k)²)`.
pub fn scalar_cost(a: f64, b: f64, q: f64, r: f64, sigma: f64, k: f64) -> f64 {
    (q + r * k * k) * sigma / (1.0 - (a - b * k).powi(2))
}

pub fn cost(inst: &LqrInstance, k: &Matrix) -> f64 {
    inst.certify(&Gain::from(k.clone())).unwrap().cost
}

pub fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Matrix {
    let mut e = Matrix::zeros(rows, cols);
    e[(i, j)] = 1.0;
    e
}

/// Central differences of the cost, entry by entry.
pub fn fd_gradient(inst: &LqrInstance, k: &Matrix, h: f64) -> Matrix {
    Matrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        let e = unit(k.nrows(), k.ncols(), i, j);
        (cost(inst, &(k + h * &e)) - cost(inst, &(k - h * &e))) / (2.0 * h)
    })
}

/// `(f(K + hE) − 2f(K) + f(K − hE)) / h²`.
pub fn fd_second(inst: &LqrInstance, k: &Matrix, e: &Matrix, h: f64) -> f64 {
    (cost(inst, &(k + h * e)) - 2.0 * cost(inst, k) + cost(inst, &(k - h * e))) / (h * h)
}

pub fn random_matrix(prng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    prng.normal_matrix(rows, cols)
}

pub fn random_unit(prng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    let e = prng.normal_matrix(rows, cols);
    let norm = e.norm();
    e / norm
}

/// Stabilizing gains `K* + s E` with random directions and radii, keeping
/// those whose cost stays below `cost_cap · f*`.
pub fn stabilizing_gains(inst: &LqrInstance, prng: &mut Prng, count: usize, cost_cap: f64) -> Vec<Gain> {
    let opt = inst.optimal_solution(&stabilizing_seed(inst)).unwrap();
    let scale = 1.0 + opt.k_star.norm();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let e = random_unit(prng, inst.m(), inst.n());
        let s = scale * (0.02 + 0.6 * prng.uniform());
        let k = Gain::from(opt.k_star.as_matrix() + s * e);
        if let Ok(c) = inst.certify(&k) {
            if c.cost <= cost_cap * opt.f_star {
                out.push(k);
            }
        }
    }
    out
}

/// A stabilizing gain for instances generated with `ρ(A) < 1`.
pub fn stabilizing_seed(inst: &LqrInstance) -> Gain {
    Gain::zeros(inst.m(), inst.n())
}

/// Seeded general instance with `n ≤ 6`, `m ≤ 4`.
pub fn small_instance(seed: u64) -> LqrInstance {
    let mut prng = Prng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = 1 + (prng.uniform() * 6.0) as usize;
    let m = 1 + (prng.uniform() * n.min(4) as f64) as usize;
    let rho = 0.3 + 0.65 * prng.uniform();
    gen_random_general_instance(n, m, seed, rho).unwrap()
}

pub fn rel_err(approx: f64, exact: f64, floor: f64) -> f64 {
    (approx - exact).abs() / exact.abs().max(floor)
}
