//! The truncated Carleman system: model parameters, moment stacks on
//! standard or combination-technique grids, the block operator, the
//! right-hand side and the theory-constant admissibility report.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fem1d::{self, FemVector, Level};
use crate::sparse::{self, LevelIndex};
use crate::tensor::{
    apply_all, apply_except, contract_pair, galerkin_kron_sum, insert_mode, outer_product, Duality,
    GaussianKernel, ModeOpSet, MomentTensor, QuadraticForm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    #[default]
    Standard,
    Sparse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub nu: f64,
    #[serde(rename = "lambda")]
    pub lambda_destab: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    pub dt: f64,
    #[serde(rename = "N")]
    pub truncation: usize,
    #[serde(rename = "J")]
    pub level: Level,
    #[serde(default)]
    pub discretization: Discretization,
    /// Replaces the convection term by the symmetrized nonlocal interaction.
    #[serde(default)]
    pub nonlocal: Option<GaussianKernel>,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            nu: 0.01,
            lambda_destab: 0.0,
            a: 1.05,
            b: 0.01,
            c: 0.0,
            t_final: 0.5,
            dt: 1e-3,
            truncation: 1,
            level: 7,
            discretization: Discretization::Standard,
            nonlocal: None,
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.nu, self.lambda_destab, self.a, self.b, self.c, self.t_final, self.dt];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(invalid("params", "all scalar parameters must be finite"));
        }
        if self.nu <= 0.0 {
            return Err(invalid("nu", format!("must be positive, got {}", self.nu)));
        }
        if self.lambda_destab < 0.0 {
            return Err(invalid("lambda", format!("must be nonnegative, got {}", self.lambda_destab)));
        }
        if self.a <= 1.0 {
            return Err(invalid("a", format!("must exceed 1, got {}", self.a)));
        }
        if self.b < 0.0 {
            return Err(invalid("b", format!("must be nonnegative, got {}", self.b)));
        }
        if self.t_final <= 0.0 {
            return Err(invalid("T", "must be positive"));
        }
        if self.dt <= 0.0 || self.dt > self.t_final * (1.0 + 1e-12) {
            return Err(invalid("dt", format!("must lie in (0, T], got {}", self.dt)));
        }
        self.steps()?;
        if self.truncation == 0 {
            return Err(invalid("N", "truncation level must be at least 1"));
        }
        fem1d::DyadicMesh::new(self.level)?;
        if self.discretization == Discretization::Sparse && self.truncation >= 2 {
            let top = self.truncation as Level;
            if self.level < top {
                return Err(Error::EmptyScheme { order: self.truncation, level: self.level });
            }
        }
        if let Some(k) = self.nonlocal {
            if !k.amplitude.is_finite() || !(k.width.is_finite() && k.width > 0.0) {
                return Err(invalid("nonlocal", "kernel needs finite amplitude and positive width"));
            }
        }
        Ok(())
    }

    /// Number of time steps `T / dt`; errors unless it is an integer to 1e-9.
    pub fn steps(&self) -> Result<usize> {
        let r = self.t_final / self.dt;
        let n = r.round();
        if n < 1.0 || (r - n).abs() > 1e-9 * n.max(1.0) {
            return Err(invalid("dt", format!("T = {} is not a multiple of dt = {}", self.t_final, self.dt)));
        }
        Ok(n as usize)
    }

    pub fn quadratic(&self) -> QuadraticForm {
        match self.nonlocal {
            Some(k) => QuadraticForm::Nonlocal(k),
            None => QuadraticForm::Convection,
        }
    }

    /// `y₀(x) = 2πb sin(πx) / (a + cos(πx))`.
    pub fn initial_value(&self, x: f64) -> f64 {
        2.0 * PI * self.b * (PI * x).sin() / (self.a + (PI * x).cos())
    }

    /// `f(x) = c (x² − 1)`.
    pub fn forcing(&self, x: f64) -> f64 {
        self.c * (x * x - 1.0)
    }
}

/// One component grid of a moment: a tensor on `levels` entering the
/// combination with integer weight `coeff`.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub coeff: i64,
    pub tensor: MomentTensor,
}

impl Component {
    pub fn levels(&self) -> &[Level] {
        self.tensor.levels()
    }
}

/// The moment `y^(k)` as a signed sum of component tensors; a standard
/// discretization has exactly one component with weight 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Moment {
    pub components: Vec<Component>,
}

impl Moment {
    pub fn order(&self) -> usize {
        self.components.first().map_or(0, |c| c.tensor.order())
    }

    /// The represented function interpolated on the grid `target`.
    pub fn combined(&self, target: &[Level]) -> Result<MomentTensor> {
        if let [only] = self.components.as_slice() {
            if only.coeff == 1 && only.levels() == target {
                return Ok(only.tensor.clone());
            }
        }
        sparse::combine_onto(self.components.iter().map(|c| (c.coeff, &c.tensor)), target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarlemanState {
    moments: Vec<Moment>,
}

impl CarlemanState {
    pub fn new(moments: Vec<Moment>) -> Result<Self> {
        for (i, m) in moments.iter().enumerate() {
            if m.components.is_empty() || m.components.iter().any(|c| c.tensor.order() != i + 1) {
                return Err(Error::DimensionMismatch(format!("moment {} must have order {}", i + 1, i + 1)));
            }
        }
        Ok(Self { moments })
    }

    pub fn truncation(&self) -> usize {
        self.moments.len()
    }

    pub fn moments(&self) -> &[Moment] {
        &self.moments
    }

    pub fn moments_mut(&mut self) -> &mut [Moment] {
        &mut self.moments
    }

    /// First moment on its (single) level-J grid.
    pub fn first_moment(&self) -> Result<FemVector> {
        let c = &self.moments[0].components[0];
        FemVector::new(c.levels()[0], c.tensor.data().to_vec())
    }

    /// Concatenated Euclidean norm over every component of every moment.
    pub fn norm_l2(&self) -> f64 {
        self.moments
            .iter()
            .flat_map(|m| &m.components)
            .map(|c| c.tensor.norm_l2().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn axpy(&mut self, alpha: f64, other: &CarlemanState) -> Result<()> {
        if self.moments.len() != other.moments.len() {
            return Err(Error::DimensionMismatch("states with different truncation".into()));
        }
        for (a, b) in self.moments.iter_mut().zip(&other.moments) {
            if a.components.len() != b.components.len() {
                return Err(Error::DimensionMismatch("states with different layouts".into()));
            }
            for (x, y) in a.components.iter_mut().zip(&b.components) {
                x.tensor.axpy(alpha, &y.tensor)?;
            }
        }
        Ok(())
    }
}

/// Assembled model: parameters, per-level operators and the component-grid
/// layout of every moment.
#[derive(Debug, Clone)]
pub struct CarlemanModel {
    params: ModelParams,
    ops: ModeOpSet,
    layouts: Vec<Vec<(LevelIndex, i64)>>,
    /// Load vector of `f` per level (index `level - 1`).
    loads: Vec<Vec<f64>>,
    /// Set to `false` to drop the quadratic coupling (linear decoupling tests).
    coupling: bool,
}

impl CarlemanModel {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let ops = ModeOpSet::new(params.nu, params.lambda_destab, params.level, &params.quadratic())?;
        let layouts = (1..=params.truncation)
            .map(|k| layout(params.discretization, k, params.level))
            .collect::<Result<Vec<_>>>()?;
        let loads = (1..=params.level)
            .map(|l| fem1d::load_vector(l, |x| params.forcing(x)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, ops, layouts, loads, coupling: true })
    }

    /// Same model with the quadratic term switched off.
    pub fn without_coupling(mut self) -> Self {
        self.coupling = false;
        self
    }

    pub fn coupling(&self) -> bool {
        self.coupling
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn ops(&self) -> &ModeOpSet {
        &self.ops
    }

    pub fn truncation(&self) -> usize {
        self.params.truncation
    }

    /// Component grids and weights of moment `k` (1-based).
    pub fn layout(&self, k: usize) -> &[(LevelIndex, i64)] {
        &self.layouts[k - 1]
    }

    pub fn load(&self, level: Level) -> &[f64] {
        &self.loads[level as usize - 1]
    }

    pub fn has_forcing(&self) -> bool {
        self.params.c != 0.0
    }

    /// State with every component set to zero.
    pub fn zero_state(&self, duality: Duality) -> CarlemanState {
        let moments = self
            .layouts
            .iter()
            .map(|lay| Moment {
                components: lay
                    .iter()
                    .map(|(l, c)| Component { coeff: *c, tensor: MomentTensor::zeros(l.clone(), duality) })
                    .collect(),
            })
            .collect();
        CarlemanState { moments }
    }

    /// `y^(k)(0) = ⊗^k y₀`, interpolated per component grid.
    pub fn initial_state(&self) -> Result<CarlemanState> {
        let interp: Vec<FemVector> = (1..=self.params.level)
            .map(|l| FemVector::interpolate(l, |x| self.params.initial_value(x)))
            .collect::<Result<_>>()?;
        let moments = self
            .layouts
            .iter()
            .map(|lay| {
                let components = lay
                    .iter()
                    .map(|(l, c)| {
                        let vs: Vec<&FemVector> = l.iter().map(|&j| &interp[j as usize - 1]).collect();
                        Ok(Component { coeff: *c, tensor: outer_product(&vs)? })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Moment { components })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CarlemanState { moments })
    }

    pub fn mass_term(&self, y: &MomentTensor) -> Result<MomentTensor> {
        let m = self.ops.masses(y.levels())?;
        Ok(apply_all(&m, y)?.with_duality(Duality::Dual))
    }

    /// `A_k y` in Galerkin form: `Σ_i M ⊗ … ⊗ A_h ⊗ … ⊗ M`.
    pub fn linear_term(&self, y: &MomentTensor) -> Result<MomentTensor> {
        let m = self.ops.masses(y.levels())?;
        let a = self.ops.linear_ops(y.levels())?;
        galerkin_kron_sum(&m, &a, y)
    }

    /// `B_k y^(k+1)` tested on the grid `levels` of a moment-k component.
    pub fn coupling_term(&self, levels: &[Level], next: &Moment) -> Result<MomentTensor> {
        let k = levels.len();
        let mut acc = MomentTensor::zeros(levels.to_vec(), Duality::Dual);
        if !self.coupling {
            return Ok(acc);
        }
        let mut src_cache: Vec<(LevelIndex, MomentTensor)> = Vec::new();
        for i in 0..k {
            let mut src_levels = levels.to_vec();
            src_levels.insert(i + 1, levels[i]);
            let src = match src_cache.iter().find(|(l, _)| *l == src_levels) {
                Some((_, t)) => t.clone(),
                None => {
                    let t = next.combined(&src_levels)?;
                    src_cache.push((src_levels.clone(), t.clone()));
                    t
                }
            };
            let masses = self.ops.masses(&src_levels)?;
            let mut src = src;
            for (m, op) in masses.iter().enumerate() {
                if m != i && m != i + 1 {
                    src = crate::tensor::mode_apply(*op, &src, m)?;
                }
            }
            let form = &self.ops.get(levels[i])?.form;
            acc.axpy(1.0, &contract_pair(form, &src, i)?)?;
        }
        Ok(acc)
    }

    /// `F_k y^(k−1)` tested on the grid `levels` of a moment-k component, k ≥ 2.
    pub fn forcing_term(&self, levels: &[Level], prev: &Moment) -> Result<MomentTensor> {
        let k = levels.len();
        let mut acc = MomentTensor::zeros(levels.to_vec(), Duality::Dual);
        if k < 2 || !self.has_forcing() {
            return Ok(acc);
        }
        for i in 0..k {
            let mut src_levels = levels.to_vec();
            let li = src_levels.remove(i);
            let src = prev.combined(&src_levels)?;
            let masses = self.ops.masses(&src_levels)?;
            let src = apply_except(&masses, &src, None)?;
            let f: Vec<f64> = self.load(li).iter().map(|v| -v).collect();
            acc.axpy(1.0, &insert_mode(&f, li, &src, i)?.with_duality(Duality::Dual))?;
        }
        Ok(acc)
    }

    /// Off-diagonal contributions `F_k y^(k−1) + B_k y^(k+1)` for component
    /// `levels` of moment `k` (1-based).
    pub fn off_diagonal(&self, k: usize, levels: &[Level], state: &CarlemanState) -> Result<MomentTensor> {
        let mut acc = MomentTensor::zeros(levels.to_vec(), Duality::Dual);
        if k < state.truncation() {
            acc.axpy(1.0, &self.coupling_term(levels, &state.moments[k])?)?;
        }
        if k >= 2 {
            acc.axpy(1.0, &self.forcing_term(levels, &state.moments[k - 2])?)?;
        }
        Ok(acc)
    }

    /// Row `k` of `𝒜_N y = F_k y^(k−1) + A_k y^(k) + B_k y^(k+1)`, per component.
    pub fn apply_block_operator(&self, state: &CarlemanState, _t: f64) -> Result<CarlemanState> {
        self.check_state(state)?;
        let mut out = self.zero_state(Duality::Dual);
        for (k, moment) in state.moments.iter().enumerate() {
            for (j, comp) in moment.components.iter().enumerate() {
                let mut r = self.linear_term(&comp.tensor)?;
                r.axpy(1.0, &self.off_diagonal(k + 1, comp.levels(), state)?)?;
                out.moments[k].components[j].tensor = r;
            }
        }
        Ok(out)
    }

    /// `f_N = (f, 0, …, 0)` as load vectors.
    pub fn rhs(&self, _t: f64) -> CarlemanState {
        let mut out = self.zero_state(Duality::Dual);
        let comp = &mut out.moments[0].components[0];
        let level = comp.levels()[0];
        comp.tensor.data_mut().copy_from_slice(self.load(level));
        out
    }

    pub fn check_state(&self, state: &CarlemanState) -> Result<()> {
        if state.truncation() != self.truncation() {
            return Err(Error::DimensionMismatch(format!(
                "state has {} moments, model truncates at {}",
                state.truncation(),
                self.truncation()
            )));
        }
        for (k, m) in state.moments.iter().enumerate() {
            let lay = &self.layouts[k];
            if m.components.len() != lay.len()
                || m.components.iter().zip(lay).any(|(c, (l, w))| c.levels() != l.as_slice() || c.coeff != *w)
            {
                return Err(Error::DimensionMismatch(format!("moment {} does not match the model layout", k + 1)));
            }
        }
        Ok(())
    }
}

/// Component grids of moment `k`: the full level-J grid for standard
/// discretizations and for `k = 1`, otherwise the combination scheme.
pub fn layout(disc: Discretization, k: usize, level: Level) -> Result<Vec<(LevelIndex, i64)>> {
    match disc {
        Discretization::Sparse if k >= 2 => Ok(sparse::build_scheme(k, level)?.terms().to_vec()),
        _ => Ok(vec![(vec![level; k], 1)]),
    }
}

/// Discrete estimates of the constants in the convergence theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// `sup |⟨Av, w⟩| / (‖v‖_V ‖w‖_V)`
    pub beta: f64,
    pub gamma: f64,
    pub lambda_shift: f64,
    /// Sampled sup of `|⟨B(u,v),w⟩| / (‖u‖_H^½ ‖u‖_V^½ ‖v‖_H^½ ‖v‖_V^½ ‖w‖_V)`.
    pub c_b_hat: f64,
    /// Sampled sup of `‖B(u⊗v)‖_{V'} / ‖u⊗v‖_{V^0_1(2)}`.
    pub c_b_bilinear_hat: f64,
    /// Sampled sup of `‖F_1 v‖_{V^0_{-1}(2)} / (‖f‖_H ‖v‖_V)`.
    pub c_f_hat: f64,
    pub forcing_norm_h: f64,
    pub forcing_norm_vdual: f64,
    /// `√2 ĉ_B(0,0) + ĉ_F ‖f‖_H`
    pub c_p_hat: f64,
    /// `1 / (8 exp(2 λ T) ĉ_B)` with `c_N = 1`; optimistic.
    pub rho_t: f64,
    pub c_n_assumed: f64,
    pub y0_norm_h: f64,
    pub admissible_coercivity: bool,
    pub admissible_size: bool,
    pub samples: usize,
    pub seed: u64,
    pub level: Level,
}

/// Sampled constants that depend only on the level, the quadratic form and the
/// shape of `f`; reusable across parameter sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledConstants {
    pub c_b_hat: f64,
    pub c_b_bilinear_hat: f64,
    pub c_f_hat: f64,
}

fn random_smooth(fact: &fem1d::SpectralFactorization, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lam = fact.eigenvalues();
    let v = fact.vectors();
    let n = lam.len();
    let mut u = vec![0.0; n];
    for i in 0..n {
        let xi: f64 = rng.gen_range(-1.0..1.0) / lam[i];
        for (r, ur) in u.iter_mut().enumerate() {
            *ur += xi * v[(r, i)];
        }
    }
    u
}

/// Monte Carlo estimates over `samples` random smooth functions with
/// eigen-coefficients `ξ_i / λ_i`, `ξ_i ~ U(−1, 1)`.
pub fn sample_constants(level: Level, quadratic: &QuadraticForm, samples: usize, seed: u64) -> Result<SampledConstants> {
    if samples == 0 {
        return Err(invalid("samples", "need at least one sample"));
    }
    let set = ModeOpSet::new(1.0, 0.0, level, quadratic)?;
    let ops = set.get(level)?;
    let fact = &ops.spectral_l;
    let lam = fact.eigenvalues();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = FemVector::interpolate(level, |x| x * x - 1.0)?;
    let fc = fact.primal_coefficients(shape.coeffs());
    let f_h = fem1d::norm_h(&shape);
    let (mut cb, mut cbb, mut cf) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..samples {
        let u = FemVector::new(level, random_smooth(fact, &mut rng))?;
        let v = FemVector::new(level, random_smooth(fact, &mut rng))?;
        let g = ops.form.apply(u.coeffs(), v.coeffs());
        let sup_w = fem1d::dual_norm_v(&g, level)?;
        let (uh, uv, vh, vv) = (fem1d::norm_h(&u), fem1d::norm_v(&u), fem1d::norm_h(&v), fem1d::norm_v(&v));
        let den = (uh * uv * vh * vv).sqrt();
        if den > 0.0 {
            cb = cb.max(sup_w / den);
        }
        let tens = (uv * uv * vh * vh + uh * uh * vv * vv).sqrt();
        if tens > 0.0 {
            cbb = cbb.max(sup_w / tens);
        }
        // ‖f⊗v + v⊗f‖²_{V^0_{-1}(2)} = Σ (f_i v_j + v_i f_j)² / (λ_i + λ_j)
        let vc = fact.primal_coefficients(v.coeffs());
        let mut s = 0.0;
        for i in 0..lam.len() {
            for j in 0..lam.len() {
                let e = fc[i] * vc[j] + vc[i] * fc[j];
                s += e * e / (lam[i] + lam[j]);
            }
        }
        if f_h > 0.0 && vv > 0.0 {
            cf = cf.max(s.sqrt() / (f_h * vv));
        }
    }
    Ok(SampledConstants { c_b_hat: cb, c_b_bilinear_hat: cbb, c_f_hat: cf })
}

pub const DEFAULT_SAMPLES: usize = 1000;

/// Theory constants for `params` from previously sampled estimates.
pub fn theory_constants(params: &ModelParams, sampled: &SampledConstants, samples: usize, seed: u64) -> Result<TheoryConstants> {
    params.validate()?;
    let level = params.level;
    let l = fem1d::assemble_l(level)?;
    let m = fem1d::assemble_mass(level)?;
    let fact = fem1d::generalized_eig(&l, &m, level)?;
    let nu = params.nu;
    let shift = nu + params.lambda_destab;
    let beta = fact.eigenvalues().iter().map(|li| (nu - shift / li).abs()).fold(0.0, f64::max);
    let forcing = FemVector::interpolate(level, |x| params.forcing(x))?;
    let forcing_norm_h = fem1d::norm_h(&forcing);
    let forcing_norm_vdual = fem1d::dual_norm_v(&fem1d::load_vector(level, |x| params.forcing(x))?, level)?;
    let c_p_hat = 2f64.sqrt() * sampled.c_b_bilinear_hat + sampled.c_f_hat * forcing_norm_h;
    let rho_t = 1.0 / (8.0 * (2.0 * shift * params.t_final).exp() * sampled.c_b_hat);
    let y0 = FemVector::interpolate(level, |x| params.initial_value(x))?;
    let y0_norm_h = fem1d::norm_h(&y0);
    let size = y0_norm_h + params.t_final.sqrt() * forcing_norm_vdual;
    Ok(TheoryConstants {
        beta,
        gamma: nu,
        lambda_shift: shift,
        c_b_hat: sampled.c_b_hat,
        c_b_bilinear_hat: sampled.c_b_bilinear_hat,
        c_f_hat: sampled.c_f_hat,
        forcing_norm_h,
        forcing_norm_vdual,
        c_p_hat,
        rho_t,
        c_n_assumed: 1.0,
        y0_norm_h,
        admissible_coercivity: c_p_hat < nu,
        admissible_size: size <= rho_t,
        samples,
        seed,
        level,
    })
}

/// Samples the constants at the model level and evaluates the report.
pub fn check_admissibility(params: &ModelParams, samples: usize, seed: u64) -> Result<TheoryConstants> {
    params.validate()?;
    let sampled = sample_constants(params.level, &params.quadratic(), samples, seed)?;
    theory_constants(params, &sampled, samples, seed)
}
