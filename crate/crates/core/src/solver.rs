//! Implicit Euler for the truncated system with direct Kronecker-sum block
//! solves, block back-substitution and block Gauss–Seidel.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleman::{CarlemanModel, CarlemanState, Component};
use crate::error::{invalid, Error, Result};
use crate::fem1d::{FemVector, Level};
use crate::tensor::{apply_all, Duality, ModeOpSet, ModeOperator, MomentTensor};

/// Solves `(M^{⊗k} + dt Σ_i M ⊗ … ⊗ A_h ⊗ … ⊗ M) x = rhs` in the per-mode
/// eigenbasis of `(A_h, M)`.
pub fn kron_shift_solve(ops: &ModeOpSet, dt: f64, rhs: &MomentTensor) -> Result<MomentTensor> {
    let levels = rhs.levels().to_vec();
    let facts = ops.spectral_a(&levels)?;
    let min_sigma: f64 = facts.iter().map(|f| f.eigenvalues()[0]).sum();
    let den = 1.0 + dt * min_sigma;
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::SingularStep { sigma: min_sigma, denominator: den });
    }
    let vts: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.vectors_t() as &dyn ModeOperator).collect();
    let mut c = apply_all(&vts, rhs)?;
    scale_by_eigen_sums(&mut c, &facts.iter().map(|f| f.eigenvalues()).collect::<Vec<_>>(), |s| 1.0 / (1.0 + dt * s));
    let vs: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.vectors() as &dyn ModeOperator).collect();
    Ok(apply_all(&vs, &c)?.with_duality(Duality::Primal))
}

/// Multiplies entry `(i_1, …, i_k)` by `g(Σ_m θ_m[i_m])`.
fn scale_by_eigen_sums(t: &mut MomentTensor, thetas: &[&[f64]], g: impl Fn(f64) -> f64) {
    let dims = t.dims().to_vec();
    let k = dims.len();
    let last = dims[k - 1];
    let mut idx = vec![0usize; k.saturating_sub(1)];
    for chunk in t.data_mut().chunks_exact_mut(last) {
        let base: f64 = idx.iter().enumerate().map(|(m, &i)| thetas[m][i]).sum();
        for (j, v) in chunk.iter_mut().enumerate() {
            *v *= g(base + thetas[k - 1][j]);
        }
        for m in (0..idx.len()).rev() {
            idx[m] += 1;
            if idx[m] < dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
}

/// `exp(−t ⊕A) u` for the semidiscrete linear flow `M^{⊗k} u' + A_k u = 0`.
pub fn exact_linear_flow(ops: &ModeOpSet, t: f64, u: &MomentTensor) -> Result<MomentTensor> {
    let levels: Vec<Level> = u.levels().to_vec();
    let facts = ops.spectral_a(&levels)?;
    let masses = ops.masses(&levels)?;
    let vts: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.vectors_t() as &dyn ModeOperator).collect();
    let mut c = apply_all(&vts, &apply_all(&masses, u)?)?;
    scale_by_eigen_sums(&mut c, &facts.iter().map(|f| f.eigenvalues()).collect::<Vec<_>>(), |s| (-t * s).exp());
    let vs: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.vectors() as &dyn ModeOperator).collect();
    Ok(apply_all(&vs, &c)?.with_duality(Duality::Primal))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepMethod {
    /// One descending pass; requires `c = 0`.
    BackSubstitution { verify: bool },
    GaussSeidel { tol: f64, max_sweeps: usize },
}

impl StepMethod {
    pub const DEFAULT_GS: StepMethod = StepMethod::GaussSeidel { tol: 1e-8, max_sweeps: 50 };

    /// Back-substitution without forcing, Gauss–Seidel otherwise.
    pub fn for_model(model: &CarlemanModel) -> Self {
        if model.has_forcing() {
            Self::DEFAULT_GS
        } else {
            StepMethod::BackSubstitution { verify: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub sweeps: usize,
    /// Block residual norm after each sweep (empty when not computed).
    pub residuals: Vec<f64>,
    pub rhs_norm: f64,
}

impl StepReport {
    pub fn relative_residual(&self) -> Option<f64> {
        let r = *self.residuals.last()?;
        Some(if self.rhs_norm > 0.0 { r / self.rhs_norm } else { r })
    }
}

/// Right side `M^{⊗k} y^(k) + dt f δ_{k1}` of one implicit Euler step.
fn step_rhs(model: &CarlemanModel, state: &CarlemanState, dt: f64) -> Result<CarlemanState> {
    let mut out = model.zero_state(Duality::Dual);
    for (k, m) in state.moments().iter().enumerate() {
        for (j, c) in m.components.iter().enumerate() {
            out.moments_mut()[k].components[j].tensor = model.mass_term(&c.tensor)?;
        }
    }
    if model.has_forcing() {
        out.axpy(dt, &model.rhs(0.0))?;
    }
    Ok(out)
}

/// `rhs − (M^{⊗} y + dt 𝒜_N y)` per component.
fn step_residual(model: &CarlemanModel, rhs: &CarlemanState, y: &CarlemanState, dt: f64) -> Result<f64> {
    let mut sq = 0.0;
    for (k, m) in y.moments().iter().enumerate() {
        let parts: Vec<f64> = m
            .components
            .par_iter()
            .enumerate()
            .map(|(j, c)| {
                let mut r = rhs.moments()[k].components[j].tensor.clone();
                r.axpy(-1.0, &model.mass_term(&c.tensor)?)?;
                r.axpy(-dt, &model.linear_term(&c.tensor)?)?;
                r.axpy(-dt, &model.off_diagonal(k + 1, c.levels(), y)?)?;
                Ok(r.norm_l2().powi(2))
            })
            .collect::<Result<_>>()?;
        sq += parts.iter().sum::<f64>();
    }
    Ok(sq.sqrt())
}

/// One descending sweep k = N..1, each block using the latest neighbors.
fn sweep(model: &CarlemanModel, rhs: &CarlemanState, y: &mut CarlemanState, dt: f64) -> Result<()> {
    for k in (1..=y.truncation()).rev() {
        let comps: Vec<MomentTensor> = y.moments()[k - 1]
            .components
            .par_iter()
            .enumerate()
            .map(|(j, c)| {
                let mut r = rhs.moments()[k - 1].components[j].tensor.clone();
                r.axpy(-dt, &model.off_diagonal(k, c.levels(), y)?)?;
                kron_shift_solve(model.ops(), dt, &r)
            })
            .collect::<Result<_>>()?;
        for (c, t) in y.moments_mut()[k - 1].components.iter_mut().zip(comps) {
            *c = Component { coeff: c.coeff, tensor: t };
        }
    }
    Ok(())
}

/// Implicit Euler step by block back-substitution (no forcing).
pub fn step_backsub(model: &CarlemanModel, state: &CarlemanState, dt: f64, verify: bool) -> Result<(CarlemanState, StepReport)> {
    if model.has_forcing() {
        return Err(invalid("c", "back-substitution needs c = 0; use Gauss-Seidel"));
    }
    model.check_state(state)?;
    let rhs = step_rhs(model, state, dt)?;
    let mut y = state.clone();
    sweep(model, &rhs, &mut y, dt)?;
    let residuals = if verify { vec![step_residual(model, &rhs, &y, dt)?] } else { Vec::new() };
    Ok((y, StepReport { sweeps: 1, residuals, rhs_norm: rhs.norm_l2() }))
}

/// Implicit Euler step by block Gauss–Seidel, starting from the previous state.
pub fn step_gauss_seidel(
    model: &CarlemanModel,
    state: &CarlemanState,
    dt: f64,
    tol: f64,
    max_sweeps: usize,
) -> Result<(CarlemanState, StepReport)> {
    if !(tol > 0.0) || max_sweeps == 0 {
        return Err(invalid("tol", "need tol > 0 and max_sweeps >= 1"));
    }
    model.check_state(state)?;
    let rhs = step_rhs(model, state, dt)?;
    let rhs_norm = rhs.norm_l2();
    let mut y = state.clone();
    let mut history = Vec::new();
    let mut growth = 0;
    for s in 1..=max_sweeps {
        sweep(model, &rhs, &mut y, dt)?;
        let r = step_residual(model, &rhs, &y, dt)?;
        if !r.is_finite() {
            history.push(r);
            return Err(Error::Diverged { sweeps: s, history });
        }
        if let Some(&prev) = history.last() {
            growth = if r > prev { growth + 1 } else { 0 };
        }
        history.push(r);
        if r <= tol * rhs_norm {
            return Ok((y, StepReport { sweeps: s, residuals: history, rhs_norm }));
        }
        if growth >= 3 {
            return Err(Error::Diverged { sweeps: s, history });
        }
    }
    Err(Error::NotConverged { sweeps: max_sweeps, history })
}

pub fn step(model: &CarlemanModel, state: &CarlemanState, dt: f64, method: StepMethod) -> Result<(CarlemanState, StepReport)> {
    match method {
        StepMethod::BackSubstitution { verify } => step_backsub(model, state, dt, verify),
        StepMethod::GaussSeidel { tol, max_sweeps } => step_gauss_seidel(model, state, dt, tol, max_sweeps),
    }
}

/// First-moment history on the uniform grid `t_m = m dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub level: Level,
    pub dt: f64,
    pub times: Vec<f64>,
    pub first_moment: Vec<Vec<f64>>,
    /// Full moment stacks, only when requested.
    pub states: Option<Vec<CarlemanState>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first_moment_at(&self, m: usize) -> Result<FemVector> {
        FemVector::new(self.level, self.first_moment[m].clone())
    }

    /// Index of the recorded time closest to `t`, if within `1e-9 dt`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let m = (t / self.dt).round();
        if m < 0.0 || (m * self.dt - t).abs() > 1e-9 * self.dt.max(t.abs()) {
            return None;
        }
        let m = m as usize;
        (m < self.times.len()).then_some(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub steps: usize,
    pub sweeps: Vec<usize>,
    /// Final relative block residual per step where computed.
    pub residuals: Vec<f64>,
    pub max_sweeps: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    pub method: StepMethod,
    pub store_states: bool,
}

/// Runs `T / dt` implicit Euler steps from the initial moment stack;
/// `recorder` sees every state including `t = 0`.
pub fn integrate(
    model: &CarlemanModel,
    opts: IntegrateOptions,
    recorder: &mut dyn FnMut(usize, f64, &CarlemanState) -> Result<()>,
) -> Result<(Trajectory, SolveReport)> {
    let start = Instant::now();
    let p = model.params();
    let steps = p.steps()?;
    let dt = p.dt;
    let mut state = model.initial_state()?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut first = Vec::with_capacity(steps + 1);
    let mut states = opts.store_states.then(Vec::new);
    let mut report = SolveReport { steps, sweeps: Vec::new(), residuals: Vec::new(), max_sweeps: 0, wall_ms: 0.0 };
    for m in 0..=steps {
        let t = m as f64 * dt;
        if m > 0 {
            let (next, rep) = step(model, &state, dt, opts.method)?;
            report.max_sweeps = report.max_sweeps.max(rep.sweeps);
            report.sweeps.push(rep.sweeps);
            if let Some(r) = rep.relative_residual() {
                report.residuals.push(r);
            }
            state = next;
        }
        recorder(m, t, &state)?;
        times.push(t);
        first.push(state.first_moment()?.into_coeffs());
        if let Some(s) = states.as_mut() {
            s.push(state.clone());
        }
    }
    report.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((Trajectory { level: p.level, dt, times, first_moment: first, states }, report))
}

/// [`integrate`] with the default method for the model and no recorder.
pub fn solve(model: &CarlemanModel) -> Result<(Trajectory, SolveReport)> {
    integrate(model, IntegrateOptions { method: StepMethod::for_model(model), store_states: false }, &mut |_, _, _| Ok(()))
}
