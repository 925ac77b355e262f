//! Ground truth for error measurements: the closed-form Burgers solution and
//! a fine-grid implicit Euler / Newton baseline, plus the error norms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::carleman::ModelParams;
use crate::error::{invalid, Error, Result};
use crate::fem1d::{self, FemVector, Level, TrilinearForm};
use crate::solver::Trajectory;
use crate::sparse::LevelTransfer;

/// `y(t,x) = 2πν e^{−π²νt} sin(πx) / (a + e^{−π²νt} cos(πx))`.
pub fn exact_burgers(t: f64, x: f64, nu: f64, a: f64) -> f64 {
    let e = (-PI * PI * nu * t).exp();
    2.0 * PI * nu * e * (PI * x).sin() / (a + e * (PI * x).cos())
}

/// Whether the closed form applies: `λ = 0`, `b = ν`, `c = 0`, convection.
pub fn closed_form_applies(p: &ModelParams) -> bool {
    p.lambda_destab == 0.0 && p.c == 0.0 && (p.b - p.nu).abs() <= 1e-15 * p.nu && p.nonlocal.is_none()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSolution {
    ClosedForm { nu: f64, a: f64 },
    /// Fine-grid trajectory; the first moment holds the solution.
    Numerical(Trajectory),
}

impl ReferenceSolution {
    pub fn kind(&self) -> &'static str {
        match self {
            ReferenceSolution::ClosedForm { .. } => "closed_form",
            ReferenceSolution::Numerical(_) => "numerical",
        }
    }

    /// Level on which errors against a level-`level` trajectory are measured.
    fn comparison_level(&self, level: Level) -> Level {
        match self {
            ReferenceSolution::ClosedForm { .. } => level,
            ReferenceSolution::Numerical(r) => r.level.max(level),
        }
    }

    /// The reference at time `t` as nodal values on `level`.
    pub fn values_at(&self, t: f64, level: Level) -> Result<FemVector> {
        match self {
            ReferenceSolution::ClosedForm { nu, a } => FemVector::interpolate(level, |x| exact_burgers(t, x, *nu, *a)),
            ReferenceSolution::Numerical(r) => {
                let m = r.index_of(t).ok_or_else(|| {
                    Error::DimensionMismatch(format!("reference has no state at t = {t} (dt_ref = {})", r.dt))
                })?;
                let v = &r.first_moment[m];
                if r.level == level {
                    FemVector::new(level, v.clone())
                } else {
                    FemVector::new(level, LevelTransfer::new(r.level, level)?.apply(v))
                }
            }
        }
    }
}

/// Reference matching `p`: the closed form when it applies, else the baseline.
pub fn reference_for(p: &ModelParams, ref_level: Level, dt_ref: f64) -> Result<ReferenceSolution> {
    if closed_form_applies(p) {
        Ok(ReferenceSolution::ClosedForm { nu: p.nu, a: p.a })
    } else {
        baseline_solve(p, ref_level, dt_ref)
    }
}

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 20;

/// Banded Jacobian of `u ↦ B(u, u)` (sub-, main and super-diagonal), or
/// `None` when the form couples non-neighboring nodes.
fn linearize_banded(form: &TrilinearForm, u: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = u.len();
    let (mut lo, mut di, mut up) = (vec![0.0; n.saturating_sub(1)], vec![0.0; n], vec![0.0; n.saturating_sub(1)]);
    let mut add = |j: usize, c: usize, v: f64| -> bool {
        if c == j {
            di[j] += v;
        } else if c + 1 == j {
            lo[c] += v;
        } else if c == j + 1 {
            up[j] += v;
        } else {
            return false;
        }
        true
    };
    for &(a, b, j, val) in form.entries() {
        if !add(j, a, val * u[b]) || !add(j, b, val * u[a]) {
            return None;
        }
    }
    Some((lo, di, up))
}

/// Implicit Euler with undamped Newton on level `ref_level` with step `dt_ref`.
pub fn baseline_solve(p: &ModelParams, ref_level: Level, dt_ref: f64) -> Result<ReferenceSolution> {
    if p.nonlocal.is_some() {
        return Err(Error::Unsupported("no baseline for the nonlocal model".into()));
    }
    let q = ModelParams { level: ref_level, dt: dt_ref, truncation: 1, ..p.clone() };
    q.validate()?;
    let steps = q.steps()?;
    let mass = fem1d::assemble_mass(ref_level)?;
    let a_h = fem1d::assemble_linear_operator(p.nu, p.lambda_destab, ref_level)?;
    let form = TrilinearForm::convection(ref_level)?;
    let load = fem1d::load_vector(ref_level, |x| p.forcing(x))?;
    let mut y = FemVector::interpolate(ref_level, |x| p.initial_value(x))?.into_coeffs();
    let n = y.len();
    let mut values = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    values.push(y.clone());
    times.push(0.0);
    for step in 1..=steps {
        let t = step as f64 * dt_ref;
        let my_old = mass.apply(&y);
        let scale = 1.0 + my_old.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut converged = false;
        let mut res_norm = f64::INFINITY;
        for _ in 0..=NEWTON_MAX_ITER {
            let my = mass.apply(&y);
            let ay = a_h.apply(&y);
            let byy = form.apply(&y, &y);
            let r: Vec<f64> = (0..n).map(|i| my[i] - my_old[i] + dt_ref * (ay[i] + byy[i] - load[i])).collect();
            res_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if res_norm <= NEWTON_TOL * scale {
                converged = true;
                break;
            }
            if !res_norm.is_finite() {
                break;
            }
            let (lo, di, up) = linearize_banded(&form, &y)
                .ok_or_else(|| Error::Numerical("convection Jacobian is not tridiagonal".into()))?;
            let lower: Vec<f64> = (0..n.saturating_sub(1)).map(|i| mass.off[i] + dt_ref * (a_h.off[i] + lo[i])).collect();
            let upper: Vec<f64> = (0..n.saturating_sub(1)).map(|i| mass.off[i] + dt_ref * (a_h.off[i] + up[i])).collect();
            let diag: Vec<f64> = (0..n).map(|i| mass.diag[i] + dt_ref * (a_h.diag[i] + di[i])).collect();
            let delta = fem1d::solve_tridiag(&lower, &diag, &upper, &r)
                .map_err(|_| Error::NewtonFailed { step, time: t, residual: res_norm })?;
            for (yi, d) in y.iter_mut().zip(&delta) {
                *yi -= d;
            }
        }
        if !converged {
            return Err(Error::NewtonFailed { step, time: t, residual: res_norm });
        }
        values.push(y.clone());
        times.push(t);
    }
    Ok(ReferenceSolution::Numerical(Trajectory {
        level: ref_level,
        dt: dt_ref,
        times,
        first_moment: values,
        states: None,
    }))
}

/// Checks that a reference is at least two levels finer and four times
/// smaller in time step than the run it is compared with.
pub fn check_reference_resolution(p: &ModelParams, ref_level: Level, dt_ref: f64) -> Result<()> {
    if ref_level < p.level + 2 {
        return Err(invalid("J_ref", format!("must be at least J + 2 = {}", p.level + 2)));
    }
    if dt_ref > p.dt / 4.0 * (1.0 + 1e-12) {
        return Err(invalid("dt_ref", format!("must be at most dt / 4 = {}", p.dt / 4.0)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorNorms {
    /// `max_m ‖η(t_m)‖_H`
    pub linf_h: f64,
    /// `(dt Σ_{m≥1} ‖η(t_m)‖_V²)^{1/2}`
    pub l2_v: f64,
}

/// Errors of the first moment of `traj` against `reference`, measured on the
/// finer of the two grids.
pub fn error_norms(traj: &Trajectory, reference: &ReferenceSolution) -> Result<ErrorNorms> {
    if traj.is_empty() {
        return Err(Error::DimensionMismatch("empty trajectory".into()));
    }
    let level = reference.comparison_level(traj.level);
    let mass = fem1d::assemble_mass(level)?;
    let l = fem1d::assemble_l(level)?;
    let lift = (traj.level != level).then(|| LevelTransfer::new(traj.level, level)).transpose()?;
    let mut linf: f64 = 0.0;
    let mut l2 = 0.0;
    for (m, &t) in traj.times.iter().enumerate() {
        let y = &traj.first_moment[m];
        let y = match &lift {
            Some(op) => op.apply(y),
            None => y.clone(),
        };
        let r = reference.values_at(t, level)?;
        let eta: Vec<f64> = y.iter().zip(r.coeffs()).map(|(a, b)| a - b).collect();
        linf = linf.max(mass.quad(&eta).max(0.0).sqrt());
        if m >= 1 {
            l2 += l.quad(&eta).max(0.0);
        }
    }
    Ok(ErrorNorms { linf_h: linf, l2_v: (traj.dt * l2).sqrt() })
}
