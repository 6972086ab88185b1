//! Seeded fixtures shared by the criterion benches.

use lqr_core::{gen_random_instance, Gain, LqrInstance, Matrix, Prng, SymMatrix};

/// Stable `A` with `ρ(A) = 0.9` and a positive definite `Q` of order `n`.
pub fn stein_problem(n: usize, seed: u64) -> (Matrix, SymMatrix) {
    let inst = gen_random_instance(n, seed, 0.9).expect("random instance");
    let g = Prng::new(seed ^ 0x5eed).normal_matrix(n, n);
    let q = SymMatrix::symmetrize(&g * g.transpose() + Matrix::identity(n, n));
    (inst.a().clone(), q)
}

/// The benchmark instance `B = Q = R = Σ = I` with `ρ(A) = 0.9` and the
/// stabilizing start `K₀ = 0`.
pub fn lqr_problem(n: usize, seed: u64) -> (LqrInstance, Gain) {
    let inst = gen_random_instance(n, seed, 0.9).expect("random instance");
    (inst, Gain::zeros(n, n))
}
