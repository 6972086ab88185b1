//! Gains constrained to a sparsity pattern and projected gradient descent.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::descent::{descend, IterateTrace};
use crate::error::{LqrError, Result};
use crate::linalg::{spectral_norm, Matrix};
use crate::model::{Gain, LqrInstance};

/// Off-pattern mass tolerated in a starting gain.
pub const PATTERN_TOL: f64 = 1e-14;

/// Allowed entries of an `m × n` gain.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsityPattern {
    mask: DMatrix<bool>,
}

impl SparsityPattern {
    pub fn from_mask(mask: DMatrix<bool>) -> Result<Self> {
        if !mask.iter().any(|&b| b) {
            return Err(LqrError::InvalidInput("sparsity pattern allows no entries".into()));
        }
        Ok(SparsityPattern { mask })
    }

    /// Pattern from 0-based `(row, col)` pairs.
    pub fn from_allowed(m: usize, n: usize, allowed: &[(usize, usize)]) -> Result<Self> {
        let mut mask = DMatrix::from_element(m, n, false);
        for &(i, j) in allowed {
            if i >= m || j >= n {
                return Err(LqrError::dim(format!("entry ({i}, {j}) outside a {m}x{n} pattern")));
            }
            mask[(i, j)] = true;
        }
        Self::from_mask(mask)
    }

    pub fn full(m: usize, n: usize) -> Self {
        SparsityPattern {
            mask: DMatrix::from_element(m, n, true),
        }
    }

    pub fn diagonal(m: usize, n: usize) -> Self {
        SparsityPattern {
            mask: DMatrix::from_fn(m, n, |i, j| i == j),
        }
    }

    /// Pattern of a graph given by a square matrix: `(i, j)` is allowed when the
    /// entry is nonzero, and on the diagonal when `diag_in_pattern` holds.
    pub fn from_graph(adjacency: &Matrix, diag_in_pattern: bool) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(LqrError::dim("graph adjacency must be square"));
        }
        let n = adjacency.nrows();
        Self::from_mask(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                diag_in_pattern
            } else {
                adjacency[(i, j)] != 0.0
            }
        }))
    }

    pub fn rows(&self) -> usize {
        self.mask.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mask.ncols()
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Allowed entries in column-major order.
    pub fn allowed(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.nnz());
        for j in 0..self.cols() {
            for i in 0..self.rows() {
                if self.mask[(i, j)] {
                    out.push((i, j));
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.shape() != self.mask.shape() {
            return Err(LqrError::dim(format!(
                "matrix is {}x{}, pattern is {}x{}",
                m.nrows(),
                m.ncols(),
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }

    /// Orthogonal projection onto the pattern: zeroes disallowed entries.
    pub fn project(&self, m: &Matrix) -> Result<Matrix> {
        self.check(m)?;
        Ok(self.project_unchecked(m))
    }

    fn project_unchecked(&self, m: &Matrix) -> Matrix {
        m.zip_map(&self.mask, |v, keep| if keep { v } else { 0.0 })
    }

    /// Frobenius norm of the disallowed entries.
    pub fn off_pattern_mass(&self, m: &Matrix) -> Result<f64> {
        self.check(m)?;
        Ok(m.zip_fold(&self.mask, 0.0, |acc, v, keep| if keep { acc } else { acc + v * v }).sqrt())
    }
}

#[derive(Serialize, Deserialize)]
struct PatternJson {
    m: usize,
    n: usize,
    allowed: Vec<[usize; 2]>,
}

impl Serialize for SparsityPattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PatternJson {
            m: self.rows(),
            n: self.cols(),
            allowed: self.allowed().into_iter().map(|(i, j)| [i, j]).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SparsityPattern {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = PatternJson::deserialize(d)?;
        let pairs: Vec<(usize, usize)> = raw.allowed.iter().map(|p| (p[0], p[1])).collect();
        SparsityPattern::from_allowed(raw.m, raw.n, &pairs).map_err(serde::de::Error::custom)
    }
}

/// Hessian bound over the sublevel set `{f ≤ f₀}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub f0: f64,
    /// `ξ` with `‖X′(K)[E]‖₂ ≤ ξ ‖X‖₂` for unit `E`.
    pub xi: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl LipschitzReport {
    pub fn eta(&self) -> f64 {
        1.0 / self.l
    }
}

/// `ξ` and `L` for the sublevel set at level `f0`.
pub fn lipschitz_at_level(inst: &LqrInstance, f0: f64) -> Result<LipschitzReport> {
    let q_min = inst.q_min_eig()?;
    let s_min = inst.sigma().min_eigenvalue();
    let r_max = inst.r().max_eigenvalue();
    let b = spectral_norm(inst.b());
    let xi = ((1.0 + b * b) * f0 / s_min + r_max - q_min) / q_min;
    let l = (2.0 * r_max + 2.0 * b * b * f0 / s_min + 4.0 * std::f64::consts::SQRT_2 * xi * b * f0 / s_min)
        * f0
        / q_min;
    Ok(LipschitzReport { f0, xi, l })
}

/// [`lipschitz_at_level`] at `f(K₀)`.
pub fn lipschitz_bound(inst: &LqrInstance, k0: &Gain) -> Result<LipschitzReport> {
    let f0 = inst.certify(k0)?.cost;
    lipschitz_at_level(inst, f0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// `η = 1/L` with `L` from `f(K₀)`.
    #[serde(rename = "fixed_L0")]
    FixedL0,
    /// `η_j = 1/L` with `L` from `f(K_j)`.
    #[serde(rename = "per_iter_L")]
    PerIterL,
}

impl std::str::FromStr for StepMode {
    type Err = LqrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_L0" | "fixed" => Ok(StepMode::FixedL0),
            "per_iter_L" | "per_iter" => Ok(StepMode::PerIterL),
            other => Err(LqrError::InvalidInput(format!("unknown step mode {other:?}"))),
        }
    }
}

/// Projected gradient descent `K⁺ = K − η P(∇f(K))`, stopping on `‖P(∇f)‖_F`.
pub fn pgd_run(
    inst: &LqrInstance,
    pattern: &SparsityPattern,
    k0: &Gain,
    mode: StepMode,
    grad_tol: f64,
    max_iter: usize,
) -> Result<IterateTrace> {
    let mass = pattern.off_pattern_mass(k0)?;
    if mass > PATTERN_TOL {
        return Err(LqrError::PatternViolation { mass });
    }
    let fixed = lipschitz_bound(inst, k0)?;
    let projector = |g: &Matrix| pattern.project_unchecked(g);
    descend(inst, k0, grad_tol, max_iter, Some(&projector), |_, cert| {
        let eta = match mode {
            StepMode::FixedL0 => fixed.eta(),
            StepMode::PerIterL => lipschitz_at_level(inst, cert.cost)?.eta(),
        };
        let step = pattern.project_unchecked(&cert.grad);
        Ok((Gain::from(cert.gain.as_matrix() - eta * step), eta))
    })
}
