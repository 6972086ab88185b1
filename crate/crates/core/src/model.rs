//! The LQR problem datum and the cost, gradient and Hessian of
//! `f(K) = Tr(X(K) Σ)` over stabilizing gains.
//!
//! For a gain `K` with closed loop `A_K = A − BK` Schur stable:
//!
//! * `X` solves `A_KᵀXA_K + KᵀRK + Q = X` (value matrix),
//! * `Y` solves `A_KYA_Kᵀ + Σ = Y` (state Gram matrix),
//! * `M = RK − BᵀXA_K` and `∇f(K) = 2MY`.
//!
//! Gains outside the stabilizing set are reported as
//! [`LqrError::NotSchurStable`]; the cost there is `+∞` by convention and is
//! never represented as a float.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::linalg::{
    frob_inner, solve_stein_unchecked, spd_solve, spectral_radius, Matrix, SymMatrix,
    STABILITY_MARGIN_TOL,
};

/// System `(A, B)`, costs `(Q, R)` and initial-state Gram matrix `Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrInstance {
    a: Matrix,
    b: Matrix,
    q: SymMatrix,
    r: SymMatrix,
    sigma: SymMatrix,
}

impl LqrInstance {
    /// Validates dimensions and definiteness: `Q ⪰ 0`, `R ≻ 0`, `Σ ≻ 0`.
    pub fn new(a: Matrix, b: Matrix, q: SymMatrix, r: SymMatrix, sigma: SymMatrix) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(LqrError::dim("A must be square"));
        }
        if b.nrows() != n {
            return Err(LqrError::dim(format!("B has {} rows, expected {n}", b.nrows())));
        }
        let m = b.ncols();
        if q.order() != n || sigma.order() != n || r.order() != m {
            return Err(LqrError::dim(format!(
                "expected Q, Σ of order {n} and R of order {m}, got {}, {}, {}",
                q.order(),
                sigma.order(),
                r.order()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(LqrError::InvalidInput("A or B has non-finite entries".into()));
        }
        let scale = |s: &SymMatrix| crate::linalg::PSD_TOL * (1.0 + s.norm());
        if q.min_eigenvalue() < -scale(&q) {
            return Err(LqrError::InvalidInput("Q must be positive semidefinite".into()));
        }
        if r.min_eigenvalue() <= 0.0 {
            return Err(LqrError::InvalidInput("R must be positive definite".into()));
        }
        if sigma.min_eigenvalue() <= 0.0 {
            return Err(LqrError::InvalidInput("Σ must be positive definite".into()));
        }
        Ok(LqrInstance { a, b, q, r, sigma })
    }

    /// Instance with `Σ = I`.
    pub fn with_identity_sigma(a: Matrix, b: Matrix, q: SymMatrix, r: SymMatrix) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, b, q, r, SymMatrix::identity(n))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn with_sigma(&self, sigma: SymMatrix) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), self.q.clone(), self.r.clone(), sigma)
    }

    pub fn with_q(&self, q: SymMatrix) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), q, self.r.clone(), self.sigma.clone())
    }

    /// Replaces `A` by `A · target_rho / ρ(A)`.
    pub fn with_scaled_dynamics(&self, target_rho: f64) -> Result<Self> {
        let rho = spectral_radius(&self.a)?;
        if rho == 0.0 {
            return Ok(self.clone());
        }
        Self::new(
            &self.a * (target_rho / rho),
            self.b.clone(),
            self.q.clone(),
            self.r.clone(),
            self.sigma.clone(),
        )
    }

    /// `λ₁(Q)`, failing with [`LqrError::DegenerateQ`] unless it is positive.
    pub fn q_min_eig(&self) -> Result<f64> {
        let min_eig = self.q.min_eigenvalue();
        if min_eig <= 0.0 {
            Err(LqrError::DegenerateQ { min_eig })
        } else {
            Ok(min_eig)
        }
    }

    pub fn closed_loop(&self, k: &Gain) -> Matrix {
        &self.a - &self.b * k.as_matrix()
    }

    fn check_gain(&self, k: &Matrix) -> Result<()> {
        if k.nrows() != self.m() || k.ncols() != self.n() {
            return Err(LqrError::dim(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.m(),
                self.n()
            )));
        }
        Ok(())
    }

    /// Value matrix, Gram matrix, gradient and cost at `k`.
    pub fn certify(&self, k: &Gain) -> Result<ValueCertificate> {
        self.check_gain(k)?;
        let a_k = self.closed_loop(k);
        let rho = spectral_radius(&a_k)?;
        if rho >= 1.0 - STABILITY_MARGIN_TOL {
            return Err(LqrError::NotSchurStable { rho });
        }
        let km = k.as_matrix();
        let weight = SymMatrix::symmetrize(self.q.as_matrix() + km.transpose() * self.r.as_matrix() * km);
        let x = solve_stein_unchecked(&a_k, &weight).x;
        let y = solve_stein_unchecked(&a_k.transpose(), &self.sigma).x;
        let m = self.r.as_matrix() * km - self.b.transpose() * x.as_matrix() * &a_k;
        let grad = 2.0 * &m * y.as_matrix();
        let cost = frob_inner(x.as_matrix(), self.sigma.as_matrix());
        Ok(ValueCertificate {
            gain: k.clone(),
            closed_loop: a_k,
            x,
            y,
            m,
            grad,
            cost,
            rho,
        })
    }

    /// `f(K)`, or `None` off the stabilizing set.
    pub fn cost(&self, k: &Gain) -> Result<Option<f64>> {
        match self.certify(k) {
            Ok(c) => Ok(Some(c.cost)),
            Err(LqrError::NotSchurStable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// `R + BᵀXB` for a value matrix `X`.
    pub fn riccati_weight(&self, x: &SymMatrix) -> SymMatrix {
        SymMatrix::symmetrize(self.r.as_matrix() + self.b.transpose() * x.as_matrix() * &self.b)
    }

    /// Directional derivative `X′(K)[E]` of the value matrix.
    pub fn x_prime(&self, k: &Gain, e: &Matrix) -> Result<SymMatrix> {
        let cert = self.certify(k)?;
        cert.x_prime(e)
    }

    /// `∇²f(K)[E, E]`.
    pub fn hessian_form(&self, k: &Gain, e: &Matrix) -> Result<f64> {
        let cert = self.certify(k)?;
        HessianOperator::new(self, &cert).form(e)
    }

    /// Estimate of `sup_{‖E‖_F = 1} |∇²f(K)[E, E]|` by power iteration on the
    /// self-adjoint Hessian map.
    pub fn hessian_norm_estimate(&self, k: &Gain) -> Result<f64> {
        let cert = self.certify(k)?;
        Ok(HessianOperator::new(self, &cert).norm_estimate())
    }

    /// Upper bound `f(K₀) / (4 λ₁(Q) λ₁(R) λ₁²(Σ))` on the gradient dominance
    /// coefficient over the sublevel set of `K₀`.
    pub fn dominance_bound(&self, k0: &Gain) -> Result<DominanceBound> {
        let cert = self.certify(k0)?;
        let q_min = self.q_min_eig()?;
        let r_min = self.r.min_eigenvalue();
        let s_min = self.sigma.min_eigenvalue();
        Ok(DominanceBound {
            tau_bound: cert.cost / (4.0 * q_min * r_min * s_min * s_min),
            f0: cert.cost,
        })
    }

    /// Exact gradient dominance coefficient
    /// `τ = λₙ(Y*) / (4 λ₁(R + BᵀX*B) λ₁²(Σ))`.
    pub fn tau_exact(&self, opt: &OptimalSolution) -> f64 {
        let s_min = self.sigma.min_eigenvalue();
        opt.y_star.max_eigenvalue()
            / (4.0 * self.riccati_weight(&opt.x_star).min_eigenvalue() * s_min * s_min)
    }

    /// `f(K) − f*` without cancellation: `X_K − X*` solves the Stein equation
    /// in `A_K` with weight `(K − K*)ᵀ(R + BᵀX*B)(K − K*)`.
    pub fn cost_gap(&self, cert: &ValueCertificate, opt: &OptimalSolution) -> f64 {
        let d = cert.gain.as_matrix() - opt.k_star.as_matrix();
        let w = self.riccati_weight(&opt.x_star);
        let weight = SymMatrix::symmetrize(d.transpose() * w.as_matrix() * &d);
        let gap = solve_stein_unchecked(&cert.closed_loop, &weight).x;
        frob_inner(gap.as_matrix(), self.sigma.as_matrix())
    }

    /// Frobenius residual of the discrete algebraic Riccati equation
    /// `AᵀXA − X − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Q = 0`.
    pub fn are_residual(&self, x: &SymMatrix) -> Result<f64> {
        let xm = x.as_matrix();
        let bxa = self.b.transpose() * xm * &self.a;
        let sol = spd_solve(self.riccati_weight(x).as_matrix(), &bxa)?;
        let res = self.a.transpose() * xm * &self.a - xm - bxa.transpose() * sol + self.q.as_matrix();
        Ok(res.norm())
    }

    /// One quasi-Newton (Hewer) update `(R + BᵀXB)⁻¹BᵀXA`.
    pub fn hewer_update(&self, x: &SymMatrix) -> Result<Gain> {
        let bxa = self.b.transpose() * x.as_matrix() * &self.a;
        Ok(Gain(spd_solve(self.riccati_weight(x).as_matrix(), &bxa)?))
    }

    /// Global minimizer by the Hewer iteration started at `k0`.
    pub fn optimal_solution(&self, k0: &Gain) -> Result<OptimalSolution> {
        const MAX_ITER: usize = 200;
        let mut cert = self.certify(k0)?;
        for _ in 0..MAX_ITER {
            let next = self.hewer_update(&cert.x)?;
            let next_cert = self.certify(&next)?;
            let dx = (next_cert.x.as_matrix() - cert.x.as_matrix()).norm();
            let done = dx <= 1e-12 * (1.0 + cert.x.norm());
            cert = next_cert;
            if done {
                let are_residual = self.are_residual(&cert.x)?;
                return Ok(OptimalSolution {
                    k_star: cert.gain.clone(),
                    x_star: cert.x.clone(),
                    y_star: cert.y.clone(),
                    f_star: cert.cost,
                    are_residual,
                });
            }
        }
        Err(LqrError::NoConvergence { iterations: MAX_ITER })
    }
}

/// A feedback gain `K ∈ ℝ^{m×n}` (control `u = −Kx`).
#[derive(Clone, Debug, PartialEq)]
pub struct Gain(Matrix);

impl Gain {
    pub fn new(k: Matrix) -> Result<Self> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err(LqrError::InvalidInput("gain has non-finite entries".into()));
        }
        Ok(Gain(k))
    }

    pub fn zeros(m: usize, n: usize) -> Self {
        Gain(Matrix::zeros(m, n))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl Deref for Gain {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl From<Matrix> for Gain {
    fn from(m: Matrix) -> Self {
        Gain(m)
    }
}

/// Everything the formulas need at one stabilizing gain.
#[derive(Clone, Debug)]
pub struct ValueCertificate {
    pub gain: Gain,
    /// `A − BK`.
    pub closed_loop: Matrix,
    /// Value matrix.
    pub x: SymMatrix,
    /// State Gram matrix.
    pub y: SymMatrix,
    /// Gradient factor `RK − BᵀX(A − BK)`.
    pub m: Matrix,
    /// `∇f(K) = 2MY`.
    pub grad: Matrix,
    pub cost: f64,
    /// `ρ(A − BK)`.
    pub rho: f64,
}

impl ValueCertificate {
    pub fn grad_norm(&self) -> f64 {
        self.grad.norm()
    }

    /// `X′(K)[E]`: solves `A_KᵀWA_K − W + MᵀE + EᵀM = 0`.
    pub fn x_prime(&self, e: &Matrix) -> Result<SymMatrix> {
        if e.shape() != self.gain.shape() {
            return Err(LqrError::dim("direction shape differs from gain shape"));
        }
        let mte = self.m.transpose() * e;
        let rhs = SymMatrix::symmetrize(&mte + mte.transpose());
        Ok(solve_stein_unchecked(&self.closed_loop, &rhs).x)
    }

    /// `Y′(K)[E]`: solves `A_KWA_Kᵀ − W − BEYA_Kᵀ − A_KYEᵀBᵀ = 0`.
    pub fn y_prime(&self, b: &Matrix, e: &Matrix) -> Result<SymMatrix> {
        if e.shape() != self.gain.shape() {
            return Err(LqrError::dim("direction shape differs from gain shape"));
        }
        let t = -(b * e * self.y.as_matrix() * self.closed_loop.transpose());
        let rhs = SymMatrix::symmetrize(&t + t.transpose());
        Ok(solve_stein_unchecked(&self.closed_loop.transpose(), &rhs).x)
    }
}

/// The Hessian of `f` at a certified gain, as a self-adjoint linear map on
/// `ℝ^{m×n}`.
pub struct HessianOperator<'a> {
    inst: &'a LqrInstance,
    cert: &'a ValueCertificate,
}

impl<'a> HessianOperator<'a> {
    pub fn new(inst: &'a LqrInstance, cert: &'a ValueCertificate) -> Self {
        HessianOperator { inst, cert }
    }

    /// `∇²f(K)[E, E] = 2⟨(RE + BᵀXBE)Y, E⟩ − 4⟨(BᵀX′(K)[E]A_K)Y, E⟩`.
    pub fn form(&self, e: &Matrix) -> Result<f64> {
        let c = self.cert;
        let b = self.inst.b();
        let xp = c.x_prime(e)?;
        let first = (self.inst.r().as_matrix() * e + b.transpose() * c.x.as_matrix() * b * e) * c.y.as_matrix();
        let second = b.transpose() * xp.as_matrix() * &c.closed_loop * c.y.as_matrix();
        Ok(2.0 * frob_inner(&first, e) - 4.0 * frob_inner(&second, e))
    }

    /// `∇²f(K)[E]`, the derivative of `K ↦ 2M(K)Y(K)` in direction `E`.
    pub fn apply(&self, e: &Matrix) -> Result<Matrix> {
        let c = self.cert;
        let b = self.inst.b();
        let xp = c.x_prime(e)?;
        let yp = c.y_prime(b, e)?;
        let m_dot = self.inst.r().as_matrix() * e + b.transpose() * c.x.as_matrix() * b * e
            - b.transpose() * xp.as_matrix() * &c.closed_loop;
        Ok(2.0 * m_dot * c.y.as_matrix() + 2.0 * &c.m * yp.as_matrix())
    }

    /// Power iteration from the normalized gradient (all-ones if the gradient
    /// vanishes), stopping at relative change 1e-6 or 500 iterations.
    pub fn norm_estimate(&self) -> f64 {
        let (m, n) = self.cert.gain.shape();
        let g = &self.cert.grad;
        let mut v = if g.norm() > 1e-300 {
            g / g.norm()
        } else {
            Matrix::from_element(m, n, 1.0 / ((m * n) as f64).sqrt())
        };
        let mut est = 0.0;
        for _ in 0..500 {
            let w = match self.apply(&v) {
                Ok(w) => w,
                Err(_) => break,
            };
            let norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let done = (norm - est).abs() <= 1e-6 * norm;
            est = norm;
            v = w / norm;
            if done {
                break;
            }
        }
        est
    }
}

/// The global minimizer and its certificates.
#[derive(Clone, Debug)]
pub struct OptimalSolution {
    pub k_star: Gain,
    pub x_star: SymMatrix,
    pub y_star: SymMatrix,
    pub f_star: f64,
    pub are_residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DominanceBound {
    pub tau_bound: f64,
    pub f0: f64,
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct InstanceJson {
    n: usize,
    m: usize,
    A: Vec<Vec<f64>>,
    B: Vec<Vec<f64>>,
    Q: Vec<Vec<f64>>,
    R: Vec<Vec<f64>>,
    Sigma: Vec<Vec<f64>>,
}

pub(crate) fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<Matrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(LqrError::dim(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl Serialize for LqrInstance {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        InstanceJson {
            n: self.n(),
            m: self.m(),
            A: to_rows(&self.a),
            B: to_rows(&self.b),
            Q: to_rows(&self.q),
            R: to_rows(&self.r),
            Sigma: to_rows(&self.sigma),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LqrInstance {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let raw = InstanceJson::deserialize(d)?;
        let (n, m) = (raw.n, raw.m);
        let build = || -> Result<LqrInstance> {
            let sym = |rows: &[Vec<f64>], k: usize, name: &str| SymMatrix::new(from_rows(rows, k, k, name)?);
            LqrInstance::new(
                from_rows(&raw.A, n, n, "A")?,
                from_rows(&raw.B, n, m, "B")?,
                sym(&raw.Q, n, "Q")?,
                sym(&raw.R, m, "R")?,
                sym(&raw.Sigma, n, "Sigma")?,
            )
        };
        build().map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    const PHI: f64 = 1.618_033_988_749_895;

    /// a = 2, b = 1, q = r = σ = 1.
    fn golden() -> LqrInstance {
        LqrInstance::with_identity_sigma(
            dmatrix![2.0],
            dmatrix![1.0],
            SymMatrix::identity(1),
            SymMatrix::identity(1),
        )
        .unwrap()
    }

    fn k(v: f64) -> Gain {
        Gain(dmatrix![v])
    }

    /// Closed-form scalar cost `(q + r k²) σ / (1 − (a − bk)²)`.
    fn scalar_cost(kv: f64) -> f64 {
        (1.0 + kv * kv) / (1.0 - (2.0 - kv).powi(2))
    }

    #[test]
    fn certify_golden() {
        let c = golden().certify(&k(1.5)).unwrap();
        assert!((c.x[(0, 0)] - 13.0 / 3.0).abs() < 1e-14);
        assert!((c.y[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((c.m[(0, 0)] + 2.0 / 3.0).abs() < 1e-14);
        assert!((c.cost - 13.0 / 3.0).abs() < 1e-14);
        assert!((c.grad[(0, 0)] + 16.0 / 9.0).abs() < 1e-14);
        assert!((c.rho - 0.5).abs() < 1e-15);
    }

    #[test]
    fn certify_rejects_boundary_gain() {
        assert!(matches!(
            golden().certify(&k(1.0)),
            Err(LqrError::NotSchurStable { .. })
        ));
        assert_eq!(golden().cost(&k(1.0)).unwrap(), None);
        assert!(matches!(
            golden().certify(&Gain(dmatrix![1.0, 2.0])),
            Err(LqrError::Dimension(_))
        ));
    }

    #[test]
    fn scalar_gradient_matches_closed_form_derivative() {
        let h = 1e-6;
        for &kv in &[1.2, 1.5, 1.9, 2.4] {
            let fd = (scalar_cost(kv + h) - scalar_cost(kv - h)) / (2.0 * h);
            let g = golden().certify(&k(kv)).unwrap().grad[(0, 0)];
            assert!((fd - g).abs() < 1e-6 * (1.0 + g.abs()), "k={kv}: {fd} vs {g}");
        }
    }

    #[test]
    fn x_prime_golden() {
        let inst = golden();
        let xp = inst.x_prime(&k(1.5), &dmatrix![1.0]).unwrap();
        assert!((xp[(0, 0)] + 16.0 / 9.0).abs() < 1e-13);
        let zero = inst.x_prime(&k(1.5), &dmatrix![0.0]).unwrap();
        assert_eq!(zero[(0, 0)], 0.0);
        let at_opt = inst.x_prime(&k(PHI), &dmatrix![1.0]).unwrap();
        assert!(at_opt[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn hessian_form_golden() {
        let inst = golden();
        let h = inst.hessian_form(&k(1.5), &dmatrix![1.0]).unwrap();
        assert!((h - 512.0 / 27.0).abs() < 1e-12, "{h}");
        let h2 = inst.hessian_form(&k(1.5), &dmatrix![2.0]).unwrap();
        assert!((h2 - 4.0 * h).abs() < 1e-11);
        assert!(inst.hessian_form(&k(PHI), &dmatrix![0.3]).unwrap() > 0.0);

        // Second difference of the closed-form scalar cost.
        let s = 1e-4;
        let fd = (scalar_cost(1.5 + s) - 2.0 * scalar_cost(1.5) + scalar_cost(1.5 - s)) / (s * s);
        assert!((fd - h).abs() < 1e-4 * h);
    }

    #[test]
    fn hessian_apply_is_consistent_with_form() {
        let inst = golden();
        let cert = inst.certify(&k(1.7)).unwrap();
        let op = HessianOperator::new(&inst, &cert);
        let e = dmatrix![0.7];
        let lhs = frob_inner(&op.apply(&e).unwrap(), &e);
        assert!((lhs - op.form(&e).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hessian_norm_scalar_is_exact() {
        let inst = golden();
        let est = inst.hessian_norm_estimate(&k(1.5)).unwrap();
        assert!((est - 512.0 / 27.0).abs() < 1e-10);
        assert!(inst.hessian_norm_estimate(&k(PHI)).unwrap() > 0.0);
    }

    #[test]
    fn dominance_bound_examples() {
        let inst = golden();
        let d = inst.dominance_bound(&k(1.5)).unwrap();
        assert!((d.tau_bound - 13.0 / 12.0).abs() < 1e-14);
        assert!((d.f0 - 13.0 / 3.0).abs() < 1e-14);

        let degenerate = inst.with_q(SymMatrix::zeros(1)).unwrap();
        assert!(matches!(
            degenerate.dominance_bound(&k(1.5)),
            Err(LqrError::DegenerateQ { .. })
        ));

        // Doubling Σ doubles f(K₀) and quarters 1/λ₁²(Σ).
        let doubled = inst.with_sigma(SymMatrix::scaled_identity(1, 2.0)).unwrap();
        let d2 = doubled.dominance_bound(&k(1.5)).unwrap();
        assert!((d2.tau_bound - d.tau_bound * d2.f0 / (4.0 * d.f0)).abs() < 1e-14);
    }

    #[test]
    fn optimal_solution_golden() {
        let opt = golden().optimal_solution(&k(1.5)).unwrap();
        assert!((opt.k_star[(0, 0)] - PHI).abs() < 1e-12);
        assert!((opt.x_star[(0, 0)] - (2.0 + 5f64.sqrt())).abs() < 1e-11);
        assert!(opt.are_residual <= 1e-9 * (1.0 + opt.x_star.norm()));
    }

    #[test]
    fn optimal_solution_without_dynamics() {
        let q = SymMatrix::new(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let inst = LqrInstance::with_identity_sigma(
            Matrix::zeros(2, 2),
            dmatrix![1.0; 0.5],
            q.clone(),
            SymMatrix::identity(1),
        )
        .unwrap();
        let opt = inst.optimal_solution(&Gain::zeros(1, 2)).unwrap();
        assert!(opt.k_star.norm() < 1e-15);
        assert!((opt.x_star.as_matrix() - q.as_matrix()).norm() < 1e-14);
    }

    #[test]
    fn optimal_solution_rejects_unstable_start() {
        assert!(matches!(
            golden().optimal_solution(&Gain::zeros(1, 1)),
            Err(LqrError::NotSchurStable { .. })
        ));
    }

    #[test]
    fn instance_validation() {
        let i1 = SymMatrix::identity(1);
        assert!(LqrInstance::new(dmatrix![1.0], dmatrix![1.0], i1.clone(), SymMatrix::zeros(1), i1.clone()).is_err());
        assert!(LqrInstance::new(dmatrix![1.0], dmatrix![1.0], i1.clone(), i1.clone(), SymMatrix::zeros(1)).is_err());
        assert!(LqrInstance::new(dmatrix![1.0], dmatrix![1.0, 1.0], i1.clone(), i1.clone(), i1.clone()).is_err());
        assert!(LqrInstance::new(
            dmatrix![1.0],
            dmatrix![1.0],
            SymMatrix::from_diagonal(&[-1.0]),
            i1.clone(),
            i1
        )
        .is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let inst = LqrInstance::new(
            dmatrix![0.1, 1.0 / 3.0; -2.0e-17, 0.7],
            dmatrix![1.0; std::f64::consts::PI],
            SymMatrix::identity(2),
            SymMatrix::from_diagonal(&[0.3]),
            SymMatrix::new(dmatrix![1.0, 0.1; 0.1, 2.0]).unwrap(),
        )
        .unwrap();
        let text = serde_json::to_string(&inst).unwrap();
        assert!(text.contains("\"Sigma\""));
        let back: LqrInstance = serde_json::from_str(&text).unwrap();
        assert_eq!(back, inst);
    }

    #[test]
    fn json_rejects_bad_shapes() {
        let bad = r#"{"n":2,"m":1,"A":[[1,0]],"B":[[1],[0]],"Q":[[1,0],[0,1]],"R":[[1]],"Sigma":[[1,0],[0,1]]}"#;
        assert!(serde_json::from_str::<LqrInstance>(bad).is_err());
    }

    #[test]
    fn cost_gap_matches_difference() {
        let inst = golden();
        let opt = inst.optimal_solution(&k(1.5)).unwrap();
        for &kv in &[1.2, 1.5, 2.4] {
            let cert = inst.certify(&k(kv)).unwrap();
            let gap = inst.cost_gap(&cert, &opt);
            assert!((gap - (cert.cost - opt.f_star)).abs() < 1e-11 * (1.0 + cert.cost));
        }
        let near = inst.certify(&k(PHI + 1e-9)).unwrap();
        let gap = inst.cost_gap(&near, &opt);
        assert!(gap > 0.0 && gap < 1e-16);
    }
}
