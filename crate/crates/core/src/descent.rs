//! Forward-Euler discretizations of the three flows.
//!
//! * gradient descent `K⁺ = K − η∇f(K)` with the adaptive `b, c, d` stepsize,
//! * natural gradient descent `K⁺ = K − 2ηM` with `η = 1/(2λₙ(R + BᵀXB))`,
//! * quasi-Newton `K⁺ = (R + BᵀXB)⁻¹BᵀXA` (the Hewer iteration).

use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::linalg::{loewner_margin, spectral_norm, Matrix};
use crate::model::{Gain, LqrInstance, ValueCertificate};

pub const DEFAULT_MAX_ITER_GD: usize = 100_000;
pub const DEFAULT_MAX_ITER_NGD: usize = 10_000;
pub const DEFAULT_MAX_ITER_QN: usize = 100;

/// Default stationarity tolerance `1e-8 · (1 + f(K₀))`.
pub fn default_grad_tol(f0: f64) -> f64 {
    1e-8 * (1.0 + f0)
}

/// Constants behind one gradient descent step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepsizeReport {
    /// `λₙ(R + BᵀXB)`.
    pub a: f64,
    /// `‖BMY‖₂`.
    pub bmy_norm: f64,
    /// `λₙ(Y)`.
    pub y_max: f64,
    pub b: f64,
    pub c: f64,
    /// `max(b, c)`.
    pub d: f64,
    pub eta: f64,
    /// `4 f(K) λₙ(Y) ‖BMY‖₂ / λ₁(Q)`. Divided by `λ₁(Σ)` it bounds `‖Y′(θ)‖₂`
    /// along the step.
    pub y_prime_bound: f64,
}

/// `η = √(1/(3d) + 1/9) − 1/3`, the maximizer of `η − dη² − dη³`.
///
/// Evaluated as `(1/(3d)) / (√(1/(3d) + 1/9) + 1/3)` to avoid cancellation at large `d`.
pub fn eta_from_d(d: f64) -> f64 {
    let t = 1.0 / (3.0 * d);
    t / ((t + 1.0 / 9.0).sqrt() + 1.0 / 3.0)
}

/// Gradient descent stepsize at a certified gain.
///
/// `c` carries `λ₁²(Q)` in its denominator, and every `Y`-dependent quantity is
/// evaluated at the current iterate. The `‖Y′‖` bound inside `b` and `c` is
/// taken with its `1/λ₁(Σ)` factor.
pub fn gd_stepsize(inst: &LqrInstance, cert: &ValueCertificate) -> Result<StepsizeReport> {
    let q_min = inst.q_min_eig()?;
    let s_min = inst.sigma().min_eigenvalue();
    let f = cert.cost;
    let a = inst.riccati_weight(&cert.x).max_eigenvalue();
    let bmy_norm = spectral_norm(&(inst.b() * &cert.m * cert.y.as_matrix()));
    let y_max = cert.y.max_eigenvalue();
    let y_prime = 4.0 * f * y_max * bmy_norm / q_min;
    let b = a * f / q_min + y_prime / (s_min * s_min);
    let c = a * y_prime / (q_min * s_min);
    let d = b.max(c);
    Ok(StepsizeReport {
        a,
        bmy_norm,
        y_max,
        b,
        c,
        d,
        eta: eta_from_d(d),
        y_prime_bound: y_prime,
    })
}

/// Uniform bounds on `b_j, c_j` over the sublevel set of `K₀` and the stepsize
/// floor they imply.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepsizeFloor {
    pub b_bound: f64,
    pub c_bound: f64,
    /// `δ = max(b_bound, c_bound)`.
    pub delta: f64,
    /// `√(1/(3δ) + 1/9) − 1/3`, the stepsize rule evaluated at `d = δ`.
    pub eta_floor: f64,
}

/// Sublevel-set bounds on the ingredients of `b, c`:
/// `λₙ(R + BᵀXB) ≤ λₙ(R) + ‖B‖²f₀/λ₁(Σ)`, `λₙ(Y) ≤ f₀/λ₁(Q)` and
/// `‖M‖₂² ≤ λₙ(R + BᵀXB) f₀/λ₁(Σ)`.
pub fn gd_stepsize_floor(inst: &LqrInstance, k0: &Gain) -> Result<StepsizeFloor> {
    let q_min = inst.q_min_eig()?;
    let f0 = inst.certify(k0)?.cost;
    let s_min = inst.sigma().min_eigenvalue();
    let r_max = inst.r().max_eigenvalue();
    let b_norm = spectral_norm(inst.b());
    let a_bar = r_max + b_norm * b_norm * f0 / s_min;
    let y_bar = f0 / q_min;
    let m_bar = (a_bar * f0 / s_min).sqrt();
    let bmy_bar = b_norm * m_bar * y_bar;
    let y_prime_bar = 4.0 * f0 * y_bar * bmy_bar / q_min;
    let b_bound = a_bar * f0 / q_min + y_prime_bar / (s_min * s_min);
    let c_bound = a_bar * y_prime_bar / (q_min * s_min);
    let delta = b_bound.max(c_bound);
    Ok(StepsizeFloor {
        b_bound,
        c_bound,
        delta,
        eta_floor: eta_from_d(delta),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradTol,
    MaxIter,
    Error,
}

/// One iterate of a descent run.
#[derive(Clone, Debug)]
pub struct TraceRecord {
    pub j: usize,
    pub gain: Gain,
    pub f: f64,
    pub grad_norm: f64,
    /// Stepsize applied to move to the next iterate; `None` on the last record.
    pub eta: Option<f64>,
    pub rho: f64,
    /// `λ₁(X_j − X_{j+1})`; `None` on the last record.
    pub loewner_step: Option<f64>,
    /// `‖P(∇f)‖_F` for projected runs.
    pub proj_grad_norm: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct IterateTrace {
    pub records: Vec<TraceRecord>,
    pub terminated_by: Termination,
}

impl IterateTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces hold at least one record")
    }

    /// Number of updates performed.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn gaps(&self, f_star: f64) -> Vec<f64> {
        self.records.iter().map(|r| r.f - f_star).collect()
    }

    /// First iteration index whose gap is at most `tol`.
    pub fn iterations_to_gap(&self, f_star: f64, tol: f64) -> Option<usize> {
        self.records.iter().position(|r| r.f - f_star <= tol)
    }
}

/// Shared driver: certify, test stationarity, step, re-certify.
pub(crate) fn descend<S>(
    inst: &LqrInstance,
    k0: &Gain,
    grad_tol: f64,
    max_iter: usize,
    projector: Option<&dyn Fn(&Matrix) -> Matrix>,
    mut step: S,
) -> Result<IterateTrace>
where
    S: FnMut(usize, &ValueCertificate) -> Result<(Gain, f64)>,
{
    let mut cert = inst.certify(k0)?;
    let mut records = Vec::new();
    for j in 0..=max_iter {
        let grad_norm = cert.grad_norm();
        let proj_grad_norm = projector.map(|p| p(&cert.grad).norm());
        let mut rec = TraceRecord {
            j,
            gain: cert.gain.clone(),
            f: cert.cost,
            grad_norm,
            eta: None,
            rho: cert.rho,
            loewner_step: None,
            proj_grad_norm,
        };
        if proj_grad_norm.unwrap_or(grad_norm) <= grad_tol {
            records.push(rec);
            return Ok(IterateTrace {
                records,
                terminated_by: Termination::GradTol,
            });
        }
        if j == max_iter {
            records.push(rec);
            break;
        }
        let (next, eta) = step(j, &cert)?;
        let next_cert = match inst.certify(&next) {
            Ok(c) => c,
            Err(LqrError::NotSchurStable { rho }) => {
                return Err(LqrError::InternalStabilityLoss { iteration: j + 1, rho })
            }
            Err(e) => return Err(e),
        };
        rec.eta = Some(eta);
        rec.loewner_step = Some(loewner_margin(&next_cert.x, &cert.x)?);
        records.push(rec);
        cert = next_cert;
    }
    Ok(IterateTrace {
        records,
        terminated_by: Termination::MaxIter,
    })
}

/// Gradient descent with the adaptive stepsize of [`gd_stepsize`].
pub fn gd_run(inst: &LqrInstance, k0: &Gain, grad_tol: f64, max_iter: usize) -> Result<IterateTrace> {
    inst.q_min_eig()?;
    descend(inst, k0, grad_tol, max_iter, None, |_, cert| {
        let report = gd_stepsize(inst, cert)?;
        let next = cert.gain.as_matrix() - report.eta * &cert.grad;
        Ok((Gain::from(next), report.eta))
    })
}

/// Gradient descent with a constant stepsize.
pub fn gd_run_constant(
    inst: &LqrInstance,
    k0: &Gain,
    eta: f64,
    grad_tol: f64,
    max_iter: usize,
) -> Result<IterateTrace> {
    if !(eta > 0.0) {
        return Err(LqrError::InvalidInput(format!("stepsize must be positive, got {eta}")));
    }
    descend(inst, k0, grad_tol, max_iter, None, |_, cert| {
        Ok((Gain::from(cert.gain.as_matrix() - eta * &cert.grad), eta))
    })
}

/// Natural gradient descent `K⁺ = K − 2ηM`, `η = 1/(2λₙ(R + BᵀXB))`.
pub fn ngd_run(inst: &LqrInstance, k0: &Gain, grad_tol: f64, max_iter: usize) -> Result<IterateTrace> {
    descend(inst, k0, grad_tol, max_iter, None, |_, cert| {
        let eta = 0.5 / inst.riccati_weight(&cert.x).max_eigenvalue();
        Ok((Gain::from(cert.gain.as_matrix() - 2.0 * eta * &cert.m), eta))
    })
}

/// Quasi-Newton iteration with stepsize 1/2, i.e. Hewer's algorithm.
pub fn qn_run(inst: &LqrInstance, k0: &Gain, grad_tol: f64, max_iter: usize) -> Result<IterateTrace> {
    descend(inst, k0, grad_tol, max_iter, None, |_, cert| {
        Ok((inst.hewer_update(&cert.x)?, 0.5))
    })
}

/// NGD contraction factor `1 − 4λ₁(R) / (λₙ(Y*) λₙ(R + BᵀX₀B))`.
pub fn ngd_contraction(inst: &LqrInstance, x0: &crate::linalg::SymMatrix, y_star: &crate::linalg::SymMatrix) -> f64 {
    1.0 - 4.0 * inst.r().min_eigenvalue()
        / (y_star.max_eigenvalue() * inst.riccati_weight(x0).max_eigenvalue())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub kind: RateKind,
    /// Linear: `q = exp(slope of ln gap_j vs j)`.
    /// Quadratic: `max_j gap_{j+1} / gap_j²`.
    pub coefficient: f64,
    /// Least-squares slope of `ln gap_{j+1}` against `ln gap_j`; near 1 for
    /// linear and near 2 for quadratic convergence. `NaN` with fewer than
    /// two consecutive pairs.
    pub order: f64,
    /// Number of leading gaps above the roundoff floor that were used.
    pub points: usize,
}

/// Gaps at or below this are treated as roundoff.
pub const GAP_FLOOR: f64 = 1e-14;

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Fits a convergence rate to a gap sequence `f_j − f*`.
///
/// Only the leading run of gaps above [`GAP_FLOOR`] is used. With `kind = None`
/// the kind is chosen from the estimated order (quadratic when it is at least
/// 1.5). Linear fits need four points, quadratic fits three.
pub fn rate_fit_gaps(gaps: &[f64], kind: Option<RateKind>) -> Result<RateFit> {
    let used: Vec<f64> = gaps.iter().copied().take_while(|&g| g > GAP_FLOOR).collect();
    if used.len() < 3 {
        return Err(LqrError::InsufficientData(format!(
            "need at least 3 gaps above {GAP_FLOOR:e}, got {}",
            used.len()
        )));
    }
    let logs: Vec<f64> = used.iter().map(|g| g.ln()).collect();
    let order = least_squares_slope(&logs[..logs.len() - 1], &logs[1..]);
    let kind = kind.unwrap_or(if order >= 1.5 { RateKind::Quadratic } else { RateKind::Linear });
    let coefficient = match kind {
        RateKind::Linear => {
            if used.len() < 4 {
                return Err(LqrError::InsufficientData(format!(
                    "linear fit needs at least 4 gaps, got {}",
                    used.len()
                )));
            }
            let js: Vec<f64> = (0..used.len()).map(|j| j as f64).collect();
            least_squares_slope(&js, &logs).exp()
        }
        RateKind::Quadratic => used
            .windows(2)
            .map(|w| w[1] / (w[0] * w[0]))
            .fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(RateFit {
        kind,
        coefficient,
        order,
        points: used.len(),
    })
}

/// [`rate_fit_gaps`] on a trace's `f_j − f*`.
pub fn rate_fit(trace: &IterateTrace, f_star: f64) -> Result<RateFit> {
    rate_fit_gaps(&trace.gaps(f_star), None)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Writes `j,f,gap,grad_norm,eta,rho,loewner_step`, plus `proj_grad_norm` when
/// the trace carries projected gradients. `gap` is empty without `f_star`.
pub fn write_trace_csv<W: std::io::Write>(trace: &IterateTrace, f_star: Option<f64>, w: W) -> Result<()> {
    let projected = trace.records.iter().any(|r| r.proj_grad_norm.is_some());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["j", "f", "gap", "grad_norm", "eta", "rho", "loewner_step"];
    if projected {
        header.push("proj_grad_norm");
    }
    out.write_record(&header)?;
    for r in &trace.records {
        let mut row = vec![
            r.j.to_string(),
            format!("{:.16e}", r.f),
            fmt_opt(f_star.map(|fs| r.f - fs)),
            format!("{:.16e}", r.grad_norm),
            fmt_opt(r.eta),
            format!("{:.16e}", r.rho),
            fmt_opt(r.loewner_step),
        ];
        if projected {
            row.push(fmt_opt(r.proj_grad_norm));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct TraceRow {
    pub j: usize,
    pub f: f64,
    pub gap: Option<f64>,
    pub grad_norm: f64,
    pub eta: Option<f64>,
    pub rho: f64,
    pub loewner_step: Option<f64>,
    #[serde(default)]
    pub proj_grad_norm: Option<f64>,
}

pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for row in rdr.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

/// Rate fit from the `gap` column of a parsed trace.
pub fn rate_fit_rows(rows: &[TraceRow]) -> Result<RateFit> {
    let gaps: Option<Vec<f64>> = rows.iter().map(|r| r.gap).collect();
    let gaps = gaps.ok_or_else(|| LqrError::InsufficientData("trace has no gap column values".into()))?;
    rate_fit_gaps(&gaps, None)
}
