//! Continuous-time descent over stabilizing gains.
//!
//! The three vector fields are
//!
//! * gradient: `K̇ = −∇f(K) = −2MY`,
//! * natural (exponent `γ`): `K̇ = −2MY^{1−γ}`,
//! * quasi-Newton: `K̇ = −(R + BᵀXB)⁻¹ 2M`,
//!
//! integrated with classical RK4 and step-doubling error control. The
//! Lyapunov functional `V(K) = f(K) − f*` is tracked along the trajectory.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LqrError, Result};
use crate::linalg::{spd_solve, Matrix};
use crate::model::{to_rows, Gain, LqrInstance, OptimalSolution, ValueCertificate};

/// Integration stops once `‖∇f‖_F` reaches this.
pub const FLOW_GRAD_TOL: f64 = 1e-10;

const ERR_ATOL: f64 = 1e-14;
const MAX_STEPS: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlowKind {
    Gradient,
    Natural { gamma: f64 },
    QuasiNewton,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Allowed increase of `V` per accepted step; `None` means
    /// `1e-12 · (1 + V(0))`.
    pub v_tol: Option<f64>,
    /// A step is accepted when
    /// `‖K_half − K_full‖_F ≤ err_tol ‖K_half − K‖_F + 1e-14 (1 + ‖K‖_F)`.
    pub err_tol: f64,
    /// Optional early stop once `V ≤ v_stop`.
    pub v_stop: Option<f64>,
}

impl FlowConfig {
    pub fn new(kind: FlowKind, t_end: f64) -> Self {
        FlowConfig {
            kind,
            t_end,
            dt_init: 1e-2,
            dt_min: 1e-12,
            v_tol: None,
            err_tol: 1e-8,
            v_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(LqrError::InvalidInput(msg));
        if !(self.t_end > 0.0) {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init) {
            return bad(format!("need 0 < dt_min ≤ dt_init, got {} and {}", self.dt_min, self.dt_init));
        }
        if !(self.err_tol > 0.0) {
            return bad(format!("err_tol must be positive, got {}", self.err_tol));
        }
        if let FlowKind::Natural { gamma } = self.kind {
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return bad(format!("natural flow exponent must be nonnegative, got {gamma}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct FlowSample {
    pub t: f64,
    pub gain: Gain,
    /// `f(K_t) − f*`.
    pub v: f64,
    pub grad_norm: f64,
    pub rho: f64,
}

#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    pub kind: FlowKind,
    pub f_star: f64,
    pub samples: Vec<FlowSample>,
    pub rejected_steps: usize,
}

impl FlowTrajectory {
    pub fn v0(&self) -> f64 {
        self.samples[0].v
    }

    pub fn last(&self) -> &FlowSample {
        self.samples.last().expect("trajectories hold at least one sample")
    }

    /// First sampled time with `V ≤ target`.
    pub fn time_to(&self, target: f64) -> Option<f64> {
        self.samples.iter().find(|s| s.v <= target).map(|s| s.t)
    }

    /// Least-squares slope of `ln V` against `t` over the second half of the
    /// samples with positive `V`.
    pub fn log_v_slope_tail(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.v > 0.0)
            .map(|s| (s.t, s.v.ln()))
            .collect();
        let tail = &pts[pts.len() / 2..];
        if tail.len() < 2 {
            return None;
        }
        let n = tail.len() as f64;
        let mt = tail.iter().map(|p| p.0).sum::<f64>() / n;
        let mv = tail.iter().map(|p| p.1).sum::<f64>() / n;
        let stv: f64 = tail.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
        let stt: f64 = tail.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
        (stt > 0.0).then(|| stv / stt)
    }

    /// CSV with header `t,V,grad_norm,rho`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "V", "grad_norm", "rho"])?;
        for s in &self.samples {
            out.write_record([
                format!("{:.16e}", s.t),
                format!("{:.16e}", s.v),
                format!("{:.16e}", s.grad_norm),
                format!("{:.16e}", s.rho),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Gains at the first samples at or after each requested time, as
    /// `[{"t": .., "K": [[..]]}, ..]`. Times past the end map to the last sample.
    pub fn gains_json(&self, times: &[f64]) -> serde_json::Value {
        let picked: Vec<serde_json::Value> = times
            .iter()
            .map(|&t| {
                let s = self.samples.iter().find(|s| s.t >= t).unwrap_or_else(|| self.last());
                serde_json::json!({ "t": s.t, "K": to_rows(s.gain.as_matrix()) })
            })
            .collect();
        serde_json::Value::Array(picked)
    }

    /// Writes `<stem>.csv` and `<stem>.gains.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str, times: &[f64]) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
        let file = std::fs::File::create(dir.join(format!("{stem}.gains.json")))?;
        serde_json::to_writer_pretty(file, &self.gains_json(times))?;
        Ok(())
    }
}

fn field(inst: &LqrInstance, cert: &ValueCertificate, kind: FlowKind) -> Result<Matrix> {
    match kind {
        FlowKind::Gradient => Ok(-&cert.grad),
        FlowKind::Natural { gamma } => {
            if gamma == 1.0 {
                Ok(-2.0 * &cert.m)
            } else if gamma == 0.0 {
                Ok(-&cert.grad)
            } else {
                let y_pow = cert.y.powf(1.0 - gamma)?;
                Ok(-2.0 * &cert.m * y_pow.as_matrix())
            }
        }
        FlowKind::QuasiNewton => {
            let w = inst.riccati_weight(&cert.x);
            Ok(-2.0 * spd_solve(w.as_matrix(), &cert.m)?)
        }
    }
}

/// Vector field of the chosen flow at `k`.
pub fn flow_rhs(inst: &LqrInstance, k: &Gain, kind: FlowKind) -> Result<Matrix> {
    let cert = inst.certify(k)?;
    field(inst, &cert, kind)
}

enum Trial {
    Accepted(ValueCertificate, f64),
    Unstable,
    TooInaccurate(f64),
}

struct Stepper<'a> {
    inst: &'a LqrInstance,
    kind: FlowKind,
}

impl Stepper<'_> {
    fn eval(&self, k: &Matrix) -> Result<Option<(ValueCertificate, Matrix)>> {
        match self.inst.certify(&Gain::from(k.clone())) {
            Ok(cert) => {
                let f = field(self.inst, &cert, self.kind)?;
                Ok(Some((cert, f)))
            }
            Err(LqrError::NotSchurStable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// One RK4 step from `k` with slope `k1` at `k`.
    fn rk4(&self, k: &Matrix, k1: &Matrix, dt: f64) -> Result<Option<Matrix>> {
        let Some((_, k2)) = self.eval(&(k + 0.5 * dt * k1))? else {
            return Ok(None);
        };
        let Some((_, k3)) = self.eval(&(k + 0.5 * dt * &k2))? else {
            return Ok(None);
        };
        let Some((_, k4)) = self.eval(&(k + dt * &k3))? else {
            return Ok(None);
        };
        Ok(Some(k + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))
    }

    fn trial(&self, cert: &ValueCertificate, slope: &Matrix, dt: f64, err_tol: f64) -> Result<Trial> {
        let k = cert.gain.as_matrix();
        let Some(full) = self.rk4(k, slope, dt)? else {
            return Ok(Trial::Unstable);
        };
        let Some(mid) = self.rk4(k, slope, 0.5 * dt)? else {
            return Ok(Trial::Unstable);
        };
        let Some((mid_cert, mid_slope)) = self.eval(&mid)? else {
            return Ok(Trial::Unstable);
        };
        let Some(half) = self.rk4(mid_cert.gain.as_matrix(), &mid_slope, 0.5 * dt)? else {
            return Ok(Trial::Unstable);
        };
        let scale = err_tol * (&half - k).norm() + ERR_ATOL * (1.0 + k.norm());
        let err = (&half - &full).norm() / scale;
        if err > 1.0 {
            return Ok(Trial::TooInaccurate(err));
        }
        match self.inst.certify(&Gain::from(half)) {
            Ok(c) => Ok(Trial::Accepted(c, err)),
            Err(LqrError::NotSchurStable { .. }) => Ok(Trial::Unstable),
            Err(e) => Err(e),
        }
    }
}

/// Integrates the flow from `k0`, computing `f*` first.
pub fn integrate(inst: &LqrInstance, k0: &Gain, cfg: &FlowConfig) -> Result<FlowTrajectory> {
    cfg.validate()?;
    inst.certify(k0)?;
    let opt = inst.optimal_solution(k0)?;
    integrate_with_optimum(inst, k0, cfg, &opt)
}

/// Integrates the flow from `k0` given the optimum, which defines `V`.
pub fn integrate_with_optimum(
    inst: &LqrInstance,
    k0: &Gain,
    cfg: &FlowConfig,
    opt: &OptimalSolution,
) -> Result<FlowTrajectory> {
    cfg.validate()?;
    let stepper = Stepper { inst, kind: cfg.kind };
    let mut cert = inst.certify(k0)?;
    let mut slope = field(inst, &cert, cfg.kind)?;
    let sample = |t: f64, c: &ValueCertificate| FlowSample {
        t,
        gain: c.gain.clone(),
        v: inst.cost_gap(c, opt),
        grad_norm: c.grad_norm(),
        rho: c.rho,
    };
    let first = sample(0.0, &cert);
    let v_tol = cfg.v_tol.unwrap_or(1e-12 * (1.0 + first.v));
    let mut samples = vec![first];
    let mut rejected_steps = 0;
    let mut t = 0.0;
    let mut dt = cfg.dt_init.min(cfg.t_end);
    loop {
        let last = samples.last().unwrap();
        if last.grad_norm <= FLOW_GRAD_TOL
            || t >= cfg.t_end
            || cfg.v_stop.is_some_and(|v| last.v <= v)
        {
            break;
        }
        let v_prev = last.v;
        let h = dt.min(cfg.t_end - t);
        match stepper.trial(&cert, &slope, h, cfg.err_tol)? {
            Trial::Accepted(next, err) => {
                let s = sample(t + h, &next);
                if s.v > v_prev + v_tol {
                    rejected_steps += 1;
                    dt = 0.5 * h;
                } else {
                    t += h;
                    slope = field(inst, &next, cfg.kind)?;
                    cert = next;
                    samples.push(FlowSample { t, ..s });
                    let grow = if err > 0.0 { 0.9 * err.powf(-0.2) } else { 2.0 };
                    // Keep dt when the last step was clipped to hit t_end.
                    dt = dt.max(h) * grow.clamp(0.2, 2.0);
                }
            }
            Trial::Unstable => {
                rejected_steps += 1;
                dt = 0.5 * h;
            }
            Trial::TooInaccurate(err) => {
                rejected_steps += 1;
                dt = h * (0.9 * err.powf(-0.2)).clamp(0.1, 0.5);
            }
        }
        if dt < cfg.dt_min {
            return Err(LqrError::StepUnderflow { t, dt });
        }
        if samples.len() + rejected_steps > MAX_STEPS {
            return Err(LqrError::NoConvergence { iterations: MAX_STEPS });
        }
    }
    Ok(FlowTrajectory {
        kind: cfg.kind,
        f_star: opt.f_star,
        samples,
        rejected_steps,
    })
}
