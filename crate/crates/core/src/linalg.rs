//! Dense real matrix kernel.
//!
//! Everything downstream is built on two discrete Lyapunov (Stein) solves per
//! gain, so the solvers here carry the accuracy budget of the whole crate:
//! a Kronecker-vectorized direct solve for small orders and a squaring
//! (doubling) iteration for larger ones.

use std::ops::Deref;

use nalgebra::{DMatrix, Schur, SymmetricEigen};

use crate::error::{LqrError, Result};

pub type Matrix = DMatrix<f64>;

/// Margin below 1 that a spectral radius must clear to count as Schur stable.
pub const STABILITY_MARGIN_TOL: f64 = 1e-9;
/// Relative residual tolerance for Stein solutions.
pub const STEIN_TOL: f64 = 1e-9;
/// Slack allowed when testing positive semidefiniteness.
pub const PSD_TOL: f64 = 1e-9;
/// Relative asymmetry accepted by [`SymMatrix::new`] before symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest order solved by the Kronecker method; larger orders use doubling.
pub const KRON_MAX_ORDER: usize = 12;

const DOUBLING_MAX_STEPS: usize = 64;

/// A real symmetric matrix. Construction symmetrizes exactly as `(S + Sᵀ)/2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix(Matrix);

impl SymMatrix {
    /// Validates squareness, finiteness and near-symmetry, then symmetrizes.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(LqrError::dim(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LqrError::InvalidInput("matrix has non-finite entries".into()));
        }
        let asym = (&m - m.transpose()).norm();
        if asym > SYMMETRY_TOL * m.norm() {
            return Err(LqrError::InvalidInput(format!(
                "matrix is not symmetric (‖S−Sᵀ‖_F = {asym:.3e})"
            )));
        }
        Ok(Self::symmetrize(m))
    }

    /// Symmetrizes without checking; for matrices symmetric up to roundoff by
    /// construction.
    pub fn symmetrize(m: Matrix) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(Matrix::identity(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(Matrix::identity(n, n) * s)
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(Matrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(Matrix::from_diagonal(&nalgebra::DVector::from_column_slice(d)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }

    /// `(λ₁, λₙ)`, the smallest and largest eigenvalues.
    pub fn eig_extremes(&self) -> (f64, f64) {
        let ev = self.0.clone().symmetric_eigenvalues();
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eig_extremes().0
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eig_extremes().1
    }

    /// `S^p` through the eigendecomposition; requires `S ≻ 0` for
    /// non-integer or negative `p`.
    pub fn powf(&self, p: f64) -> Result<SymMatrix> {
        let SymmetricEigen {
            eigenvectors,
            eigenvalues,
        } = self.0.clone().symmetric_eigen();
        let needs_pd = p < 0.0 || p.fract() != 0.0;
        if needs_pd && eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(LqrError::InvalidInput(format!(
                "fractional power {p} of a matrix that is not positive definite"
            )));
        }
        let d = Matrix::from_diagonal(&eigenvalues.map(|l| l.powf(p)));
        Ok(SymMatrix::symmetrize(&eigenvectors * d * eigenvectors.transpose()))
    }
}

impl Deref for SymMatrix {
    type Target = Matrix;
    fn deref(&self) -> &Matrix {
        &self.0
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SteinMethod {
    KronDirect,
    Doubling,
}

/// Solution of `AᵀXA + Q − X = 0` (or the transposed form).
#[derive(Clone, Debug)]
pub struct SteinSolution {
    pub x: SymMatrix,
    /// Frobenius norm of the equation residual.
    pub residual: f64,
    pub method: SteinMethod,
}

fn require_square(a: &Matrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LqrError::dim(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Largest eigenvalue modulus, from the real Schur form.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    require_square(a, "spectral radius input")?;
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LqrError::InvalidInput("matrix has non-finite entries".into()));
    }
    if a == &a.transpose() {
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        return Ok(eig.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    let n = a.nrows();
    let max_iter = 200 * n;
    let radius = |m: Matrix| {
        Schur::try_new(m, f64::EPSILON, max_iter)
            .map(|s| s.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
    };
    if let Some(rho) = radius(a.clone()) {
        return Ok(rho);
    }
    // A fixed orthogonal similarity usually breaks the stagnation.
    let probe = Matrix::from_fn(n, n, |i, j| ((i * n + j + 1) as f64).sin());
    let q = probe.qr().q();
    if let Some(rho) = radius(q.transpose() * a * &q) {
        return Ok(rho);
    }
    Ok(gelfand_radius(a))
}

/// `‖A^(2^k)‖^(1/2^k)` by normalized repeated squaring.
fn gelfand_radius(a: &Matrix) -> f64 {
    let mut m = a.clone();
    let mut log_scale = 0.0;
    let mut power = 1.0;
    for _ in 0..40 {
        let norm = m.norm();
        if norm == 0.0 {
            return 0.0;
        }
        m /= norm;
        log_scale += norm.ln() / power;
        m = &m * &m;
        power *= 2.0;
    }
    (log_scale + m.norm().ln() / power).exp()
}

fn check_stable(a: &Matrix) -> Result<()> {
    let rho = spectral_radius(a)?;
    if rho >= 1.0 - STABILITY_MARGIN_TOL {
        Err(LqrError::NotSchurStable { rho })
    } else {
        Ok(())
    }
}

/// Solves `AᵀXA + Q − X = 0`, i.e. `X = Σⱼ (Aᵀ)ʲ Q Aʲ`.
pub fn solve_stein(a: &Matrix, q: &SymMatrix) -> Result<SteinSolution> {
    require_square(a, "A")?;
    if a.nrows() != q.order() {
        return Err(LqrError::dim(format!(
            "A is {0}x{0} but Q has order {1}",
            a.nrows(),
            q.order()
        )));
    }
    check_stable(a)?;
    Ok(solve_stein_unchecked(a, q))
}

/// Solves `AYAᵀ + C − Y = 0`.
pub fn solve_stein_transposed(a: &Matrix, c: &SymMatrix) -> Result<SteinSolution> {
    solve_stein(&a.transpose(), c)
}

/// Stein solve with an explicit method choice. The stability check still runs.
pub fn solve_stein_with(a: &Matrix, q: &SymMatrix, method: SteinMethod) -> Result<SteinSolution> {
    require_square(a, "A")?;
    if a.nrows() != q.order() {
        return Err(LqrError::dim("A and Q orders differ"));
    }
    check_stable(a)?;
    let x = match method {
        SteinMethod::KronDirect => stein_kron(a, q),
        SteinMethod::Doubling => stein_doubling(a, q),
    }?;
    Ok(finish(a, q, x, method))
}

/// Caller guarantees `ρ(A) < 1` and matching orders.
pub(crate) fn solve_stein_unchecked(a: &Matrix, q: &SymMatrix) -> SteinSolution {
    let (method, x) = if a.nrows() <= KRON_MAX_ORDER {
        match stein_kron(a, q) {
            Ok(x) => (SteinMethod::KronDirect, x),
            // LU can only fail on a singular I − Aᵀ⊗Aᵀ, which stability rules
            // out up to roundoff; the series method is the safe fallback.
            Err(_) => (SteinMethod::Doubling, stein_doubling(a, q).unwrap_or_else(|_| q.clone())),
        }
    } else {
        (SteinMethod::Doubling, stein_doubling(a, q).unwrap_or_else(|_| q.clone()))
    };
    finish(a, q, x, method)
}

fn finish(a: &Matrix, q: &SymMatrix, x: SymMatrix, method: SteinMethod) -> SteinSolution {
    let residual = stein_residual(a, q, &x);
    SteinSolution { x, residual, method }
}

/// `‖AᵀXA + Q − X‖_F`.
pub fn stein_residual(a: &Matrix, q: &SymMatrix, x: &Matrix) -> f64 {
    (a.transpose() * x * a + q.as_matrix() - x).norm()
}

fn stein_kron(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    let n = a.nrows();
    let nn = n * n;
    // Column-major vec: (AᵀXA)_{ij} = Σ_{kl} A_{ki} X_{kl} A_{lj}.
    let mut lhs = Matrix::identity(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for l in 0..n {
                let alj = a[(l, j)];
                if alj == 0.0 {
                    continue;
                }
                for k in 0..n {
                    lhs[(row, k + l * n)] -= a[(k, i)] * alj;
                }
            }
        }
    }
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or(LqrError::Singular("I − Aᵀ⊗Aᵀ"))?;
    Ok(SymMatrix::symmetrize(Matrix::from_column_slice(n, n, sol.as_slice())))
}

fn stein_doubling(a: &Matrix, q: &SymMatrix) -> Result<SymMatrix> {
    let mut x = q.as_matrix().clone();
    let mut ak = a.clone();
    for _ in 0..DOUBLING_MAX_STEPS {
        let update = ak.transpose() * &x * &ak;
        x += &update;
        ak = &ak * &ak;
        // Once ‖A^(2^k)‖² is below roundoff the remaining tail is negligible
        // relative to X.
        let ak_sq = ak.norm_squared();
        if ak_sq <= 1e-16 || (update.norm() <= 1e-14 * x.norm() && ak_sq < 1.0) {
            return Ok(SymMatrix::symmetrize(x));
        }
        if !ak_sq.is_finite() {
            break;
        }
    }
    Err(LqrError::NoConvergence {
        iterations: DOUBLING_MAX_STEPS,
    })
}

/// `(λ₁(S), λₙ(S))`.
pub fn sym_eig_extremes(s: &SymMatrix) -> (f64, f64) {
    s.eig_extremes()
}

/// `λ₁(Q − P)`; nonnegative (up to [`PSD_TOL`]) iff `P ⪯ Q`.
pub fn loewner_margin(p: &SymMatrix, q: &SymMatrix) -> Result<f64> {
    if p.order() != q.order() {
        return Err(LqrError::dim(format!(
            "Loewner comparison of orders {} and {}",
            p.order(),
            q.order()
        )));
    }
    Ok(SymMatrix::symmetrize(q.as_matrix() - p.as_matrix()).min_eigenvalue())
}

/// Largest singular value, via the symmetric eigenvalues of the smaller Gram
/// matrix.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    SymMatrix::symmetrize(gram).max_eigenvalue().max(0.0).sqrt()
}

/// Frobenius inner product `⟨M, N⟩ = Tr(MᵀN)`.
pub fn frob_inner(m: &Matrix, n: &Matrix) -> f64 {
    m.dot(n)
}

/// Solves `S Z = rhs` for a symmetric positive definite `S`.
pub(crate) fn spd_solve(s: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    match s.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => s
            .clone()
            .lu()
            .solve(rhs)
            .ok_or(LqrError::Singular("R + BᵀXB")),
    }
}
