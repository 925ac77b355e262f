//! Dense k-way moment tensors and the mode-wise algebra behind the Carleman
//! block operators.
//!
//! Data is row-major over modes: the last mode varies fastest. Every mode
//! carries a refinement level, so a mode of level `l` has `2^l - 1` entries.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem1d::{self, FemVector, Level, SpectralFactorization, TridiagSym, TrilinearForm};

/// Whether a tensor holds coefficients of a function or load entries
/// (pairings with products of hat functions).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Duality {
    Primal,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTensor {
    levels: Vec<Level>,
    dims: Vec<usize>,
    data: Vec<f64>,
    duality: Duality,
}

fn level_of_dim(n: usize) -> Option<Level> {
    let m = n.checked_add(1)?;
    if m.is_power_of_two() && m >= 2 {
        Some(m.trailing_zeros())
    } else {
        None
    }
}

impl MomentTensor {
    pub fn new(levels: Vec<Level>, data: Vec<f64>, duality: Duality) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::DimensionMismatch("tensor order must be at least 1".into()));
        }
        for &l in &levels {
            fem1d::DyadicMesh::new(l)?;
        }
        let dims: Vec<usize> = levels.iter().map(|&l| fem1d::dim(l)).collect();
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::DimensionMismatch(format!(
                "tensor on levels {levels:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { levels, dims, data, duality })
    }

    pub fn zeros(levels: Vec<Level>, duality: Duality) -> Self {
        let dims: Vec<usize> = levels.iter().map(|&l| fem1d::dim(l)).collect();
        let len = dims.iter().product();
        Self { levels, dims, data: vec![0.0; len], duality }
    }

    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn duality(&self) -> Duality {
        self.duality
    }

    pub fn with_duality(mut self, duality: Duality) -> Self {
        self.duality = duality;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn check_shape(&self, other: &MomentTensor) -> Result<()> {
        if self.levels != other.levels {
            return Err(Error::DimensionMismatch(format!(
                "tensor levels {:?} vs {:?}",
                self.levels, other.levels
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &MomentTensor) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn dot(&self, other: &MomentTensor) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm of the raw entries.
    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &MomentTensor) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Block sizes `(pre, n, post)` around `mode`.
    fn split(&self, mode: usize) -> (usize, usize, usize) {
        let pre = self.dims[..mode].iter().product();
        let post = self.dims[mode + 1..].iter().product();
        (pre, self.dims[mode], post)
    }
}

/// A linear map acting along one tensor mode.
pub trait ModeOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// `input` is an `ncols × post` row-major block; `out` is `nrows × post`
    /// and is overwritten.
    fn apply_block(&self, input: &[f64], post: usize, out: &mut [f64]);
}

impl ModeOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply_block(&self, input: &[f64], post: usize, out: &mut [f64]) {
        let (m, k) = self.shape();
        debug_assert_eq!(input.len(), k * post);
        debug_assert_eq!(out.len(), m * post);
        // SAFETY: slice lengths match the (m×k)·(k×post) = (m×post) product and
        // the strides below describe the column-major matrix and row-major blocks.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                post,
                1.0,
                self.as_ptr(),
                1,
                m as isize,
                input.as_ptr(),
                post as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                post as isize,
                1,
            );
        }
    }
}

impl ModeOperator for TridiagSym {
    fn nrows(&self) -> usize {
        self.n()
    }

    fn ncols(&self) -> usize {
        self.n()
    }

    fn apply_block(&self, input: &[f64], post: usize, out: &mut [f64]) {
        let n = self.n();
        for r in 0..n {
            let row = &mut out[r * post..(r + 1) * post];
            let d = self.diag[r];
            for (o, x) in row.iter_mut().zip(&input[r * post..(r + 1) * post]) {
                *o = d * x;
            }
            if r > 0 {
                let c = self.off[r - 1];
                for (o, x) in row.iter_mut().zip(&input[(r - 1) * post..r * post]) {
                    *o += c * x;
                }
            }
            if r + 1 < n {
                let c = self.off[r];
                for (o, x) in row.iter_mut().zip(&input[(r + 1) * post..(r + 2) * post]) {
                    *o += c * x;
                }
            }
        }
    }
}

/// Identity of a given size; handy as a placeholder in Kronecker sums.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl ModeOperator for Identity {
    fn nrows(&self) -> usize {
        self.0
    }

    fn ncols(&self) -> usize {
        self.0
    }

    fn apply_block(&self, input: &[f64], _post: usize, out: &mut [f64]) {
        out.copy_from_slice(input);
    }
}

/// Contracts `op` against mode `mode` of `t`; other modes are untouched.
/// The output mode level follows from `op.nrows()`.
pub fn mode_apply(op: &(impl ModeOperator + ?Sized), t: &MomentTensor, mode: usize) -> Result<MomentTensor> {
    if mode >= t.order() {
        return Err(Error::DimensionMismatch(format!("mode {mode} out of range for order {}", t.order())));
    }
    if op.ncols() != t.dims[mode] {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} columns but mode {mode} has dimension {}",
            op.ncols(),
            t.dims[mode]
        )));
    }
    let rows = op.nrows();
    let new_level = level_of_dim(rows)
        .ok_or_else(|| Error::DimensionMismatch(format!("{rows} rows is not a level dimension")))?;
    let (pre, n, post) = t.split(mode);
    let mut levels = t.levels.clone();
    levels[mode] = new_level;
    let mut out = MomentTensor::zeros(levels, t.duality);
    let (ib, ob) = (n * post, rows * post);
    if ib == 0 || ob == 0 {
        return Ok(out);
    }
    for (inp, o) in t.data.chunks_exact(ib).zip(out.data.chunks_exact_mut(ob)).take(pre) {
        op.apply_block(inp, post, o);
    }
    Ok(out)
}

/// `Σ_m (I ⊗ … ⊗ op_m ⊗ … ⊗ I) t`.
pub fn kron_sum_apply(ops: &[&dyn ModeOperator], t: &MomentTensor) -> Result<MomentTensor> {
    if ops.len() != t.order() {
        return Err(Error::DimensionMismatch(format!(
            "{} mode operators for a tensor of order {}",
            ops.len(),
            t.order()
        )));
    }
    let mut acc = MomentTensor::zeros(t.levels.clone(), t.duality);
    for (m, op) in ops.iter().enumerate() {
        if op.nrows() != op.ncols() {
            return Err(Error::DimensionMismatch("Kronecker sum needs square mode operators".into()));
        }
        acc.axpy(1.0, &mode_apply(*op, t, m)?)?;
    }
    Ok(acc)
}

/// Applies `ops[m]` along every mode `m` except `skip`.
pub fn apply_except(ops: &[&dyn ModeOperator], t: &MomentTensor, skip: Option<usize>) -> Result<MomentTensor> {
    let mut cur = t.clone();
    for (m, op) in ops.iter().enumerate() {
        if Some(m) != skip {
            cur = mode_apply(*op, &cur, m)?;
        }
    }
    Ok(cur)
}

/// Applies `ops[m]` along every mode.
pub fn apply_all(ops: &[&dyn ModeOperator], t: &MomentTensor) -> Result<MomentTensor> {
    apply_except(ops, t, None)
}

/// Galerkin form of a Kronecker sum: `Σ_i M ⊗ … ⊗ op_i ⊗ … ⊗ M`.
pub fn galerkin_kron_sum(
    mass: &[&dyn ModeOperator],
    ops: &[&dyn ModeOperator],
    t: &MomentTensor,
) -> Result<MomentTensor> {
    if mass.len() != t.order() || ops.len() != t.order() {
        return Err(Error::DimensionMismatch("galerkin_kron_sum: operator count".into()));
    }
    let mut acc = MomentTensor::zeros(t.levels.clone(), Duality::Dual);
    for i in 0..t.order() {
        let mut term = mode_apply(ops[i], t, i)?;
        term = apply_except(mass, &term, Some(i))?;
        acc.axpy(1.0, &term)?;
    }
    Ok(acc)
}

/// Contracts modes `pos` and `pos + 1` of `t` with the trilinear form; the
/// result has order `t.order() - 1` and carries the contracted output in
/// mode `pos`.
pub fn contract_pair(form: &TrilinearForm, t: &MomentTensor, pos: usize) -> Result<MomentTensor> {
    let k1 = t.order();
    if k1 < 2 || pos + 1 >= k1 {
        return Err(Error::DimensionMismatch(format!("cannot contract modes {pos},{} of order {k1}", pos + 1)));
    }
    for m in [pos, pos + 1] {
        if t.levels[m] != form.level() {
            return Err(Error::LevelMismatch { expected: form.level(), found: t.levels[m] });
        }
    }
    let n = t.dims[pos];
    let pre: usize = t.dims[..pos].iter().product();
    let post: usize = t.dims[pos + 2..].iter().product();
    let mut levels = t.levels.clone();
    levels.remove(pos + 1);
    let mut out = MomentTensor::zeros(levels, Duality::Dual);
    for p in 0..pre {
        let src = &t.data[p * n * n * post..(p + 1) * n * n * post];
        let dst = &mut out.data[p * n * post..(p + 1) * n * post];
        for &(a, b, j, val) in form.entries() {
            let s = &src[(a * n + b) * post..(a * n + b + 1) * post];
            let d = &mut dst[j * post..(j + 1) * post];
            for (o, x) in d.iter_mut().zip(s) {
                *o += val * x;
            }
        }
    }
    Ok(out)
}

/// `B_k t = Σ_{i} (I ⊗ … ⊗ B ⊗ … ⊗ I) t` with term `i` acting on modes
/// `(i, i+1)`. `t` has order `k + 1`; all modes must share the form's level.
pub fn contract_b(form: &TrilinearForm, t: &MomentTensor) -> Result<MomentTensor> {
    if t.order() < 2 {
        return Err(Error::DimensionMismatch("contract_b needs order >= 2".into()));
    }
    let k = t.order() - 1;
    let mut acc: Option<MomentTensor> = None;
    for i in 0..k {
        let term = contract_pair(form, t, i)?;
        match acc.as_mut() {
            Some(a) => a.axpy(1.0, &term)?,
            None => acc = Some(term),
        }
    }
    Ok(acc.expect("k >= 1"))
}

/// Outer product inserting `v` (a vector of level `level`) as a new mode at
/// position `pos` of `t`.
pub fn insert_mode(v: &[f64], level: Level, t: &MomentTensor, pos: usize) -> Result<MomentTensor> {
    if pos > t.order() {
        return Err(Error::DimensionMismatch(format!("insert position {pos} beyond order {}", t.order())));
    }
    if v.len() != fem1d::dim(level) {
        return Err(Error::DimensionMismatch("inserted vector length".into()));
    }
    let pre: usize = t.dims[..pos].iter().product();
    let post: usize = t.dims[pos..].iter().product();
    let mut levels = t.levels.clone();
    levels.insert(pos, level);
    let n = v.len();
    let mut out = MomentTensor::zeros(levels, t.duality);
    for p in 0..pre {
        let src = &t.data[p * post..(p + 1) * post];
        for (j, &vj) in v.iter().enumerate() {
            let dst = &mut out.data[(p * n + j) * post..(p * n + j + 1) * post];
            for (o, x) in dst.iter_mut().zip(src) {
                *o = vj * x;
            }
        }
    }
    Ok(out)
}

/// `Σ_{i=1}^{k} sign·f` inserted at every position of the order-`(k-1)` tensor `t`.
pub fn insert_f(f: &[f64], level: Level, t: &MomentTensor, sign: f64) -> Result<MomentTensor> {
    let k = t.order() + 1;
    let mut levels = t.levels.clone();
    levels.push(level);
    let mut acc = MomentTensor::zeros(levels, t.duality);
    for i in 0..k {
        let term = insert_mode(f, level, t, i)?;
        acc.check_shape(&term).map_err(|_| {
            Error::DimensionMismatch("insert_f needs equal levels on all modes".into())
        })?;
        acc.axpy(sign, &term)?;
    }
    Ok(acc)
}

/// Rank-one tensor from per-mode vectors.
pub fn outer_product(vs: &[&FemVector]) -> Result<MomentTensor> {
    let first = vs.first().ok_or_else(|| Error::DimensionMismatch("empty outer product".into()))?;
    let mut t = MomentTensor::new(vec![first.level()], first.coeffs().to_vec(), Duality::Primal)?;
    for v in &vs[1..] {
        let pos = t.order();
        t = insert_mode(v.coeffs(), v.level(), &t, pos)?;
    }
    Ok(t)
}

/// `⊗^k u`.
pub fn outer_power(u: &FemVector, k: usize) -> Result<MomentTensor> {
    if k == 0 {
        return Err(Error::DimensionMismatch("outer power needs k >= 1".into()));
    }
    outer_product(&vec![u; k])
}

/// Norm selector for [`tensor_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TensorSpace {
    /// `H(k)`
    H,
    /// `V^0_1(k)`
    V10,
    /// `V^α_q(k)`
    Valpha { alpha: f64, q: f64 },
}

impl TensorSpace {
    fn exponents(self) -> (f64, f64) {
        match self {
            TensorSpace::H => (0.0, 0.0),
            TensorSpace::V10 => (0.0, 1.0),
            TensorSpace::Valpha { alpha, q } => (alpha, q),
        }
    }
}

/// `‖t‖² = Σ π(λ)^α σ(λ)^q c_i²` with `c` the coefficients of `t` in the
/// per-mode generalized eigenbasis of `(K + M, M)`.
pub fn tensor_norm(t: &MomentTensor, space: TensorSpace, facts: &[&SpectralFactorization]) -> Result<f64> {
    if facts.len() != t.order() {
        return Err(Error::DimensionMismatch("one factorization per mode required".into()));
    }
    for (m, f) in facts.iter().enumerate() {
        if f.level() != t.levels[m] {
            return Err(Error::LevelMismatch { expected: t.levels[m], found: f.level() });
        }
    }
    let mut c = t.clone();
    if t.duality == Duality::Primal {
        let masses: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.mass() as &dyn ModeOperator).collect();
        c = apply_all(&masses, &c)?;
    }
    let vts: Vec<&dyn ModeOperator> = facts.iter().map(|f| f.vectors_t() as &dyn ModeOperator).collect();
    c = apply_all(&vts, &c)?;
    let (alpha, q) = space.exponents();
    let lambdas: Vec<&[f64]> = facts.iter().map(|f| f.eigenvalues()).collect();
    let mut idx = vec![0usize; t.order()];
    let mut total = 0.0;
    for &coef in &c.data {
        let mut prod = 1.0;
        let mut sum = 0.0;
        for (m, &i) in idx.iter().enumerate() {
            prod *= lambdas[m][i];
            sum += lambdas[m][i];
        }
        let mut w = 1.0;
        if alpha != 0.0 {
            w *= prod.powf(alpha);
        }
        if q != 0.0 {
            w *= sum.powf(q);
        }
        total += w * coef * coef;
        for m in (0..idx.len()).rev() {
            idx[m] += 1;
            if idx[m] < t.dims[m] {
                break;
            }
            idx[m] = 0;
        }
    }
    Ok(total.sqrt())
}

/// Per-level operator bundle shared by every mode at that level.
#[derive(Debug, Clone)]
pub struct ModeOps {
    pub level: Level,
    pub mass: TridiagSym,
    pub stiffness: TridiagSym,
    /// `A_h = nu K - lambda M`
    pub a_h: TridiagSym,
    /// `L_h = K + M`
    pub l_h: TridiagSym,
    /// Eigenpairs of `(L_h, M)`.
    pub spectral_l: SpectralFactorization,
    /// Eigenpairs of `(A_h, M)`.
    pub spectral_a: SpectralFactorization,
    pub form: TrilinearForm,
}

/// Immutable operator sets for a contiguous range of levels.
#[derive(Debug, Clone)]
pub struct ModeOpSet {
    nu: f64,
    lambda_destab: f64,
    quadratic: QuadraticForm,
    ops: Vec<ModeOps>,
}

/// Gaussian interaction kernel `amplitude * exp(-(x - x')^2 / width^2)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussianKernel {
    pub amplitude: f64,
    pub width: f64,
}

impl GaussianKernel {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let d = (x - y) / self.width;
        self.amplitude * (-d * d).exp()
    }
}

/// Which quadratic operator the moment chain uses.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum QuadraticForm {
    #[default]
    Convection,
    Nonlocal(GaussianKernel),
}

impl ModeOpSet {
    /// Builds operators for levels `1..=max_level`.
    pub fn new(nu: f64, lambda_destab: f64, max_level: Level, quadratic: &QuadraticForm) -> Result<Self> {
        fem1d::DyadicMesh::new(max_level)?;
        let ops = (1..=max_level)
            .map(|level| {
                let mass = fem1d::assemble_mass(level)?;
                let stiffness = fem1d::assemble_stiffness(level)?;
                let a_h = fem1d::assemble_linear_operator(nu, lambda_destab, level)?;
                let l_h = fem1d::assemble_l(level)?;
                let spectral_l = fem1d::generalized_eig(&l_h, &mass, level)?;
                let spectral_a = fem1d::generalized_eig(&a_h, &mass, level)?;
                let form = match quadratic {
                    QuadraticForm::Convection => TrilinearForm::convection(level)?,
                    QuadraticForm::Nonlocal(k) => {
                        TrilinearForm::nonlocal(&fem1d::KernelMatrix::from_fn(level, |x, y| k.eval(x, y))?)?
                    }
                };
                Ok(ModeOps { level, mass, stiffness, a_h, l_h, spectral_l, spectral_a, form })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nu, lambda_destab, quadratic: *quadratic, ops })
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn lambda_destab(&self) -> f64 {
        self.lambda_destab
    }

    pub fn quadratic(&self) -> QuadraticForm {
        self.quadratic
    }

    pub fn max_level(&self) -> Level {
        self.ops.len() as Level
    }

    pub fn get(&self, level: Level) -> Result<&ModeOps> {
        if level == 0 {
            return Err(Error::DimensionMismatch("level 0 has no operators".into()));
        }
        self.ops
            .get(level as usize - 1)
            .ok_or_else(|| Error::DimensionMismatch(format!("no operators built for level {level}")))
    }

    pub fn masses(&self, levels: &[Level]) -> Result<Vec<&dyn ModeOperator>> {
        levels.iter().map(|&l| Ok(&self.get(l)?.mass as &dyn ModeOperator)).collect()
    }

    pub fn linear_ops(&self, levels: &[Level]) -> Result<Vec<&dyn ModeOperator>> {
        levels.iter().map(|&l| Ok(&self.get(l)?.a_h as &dyn ModeOperator)).collect()
    }

    pub fn spectral_l(&self, levels: &[Level]) -> Result<Vec<&SpectralFactorization>> {
        levels.iter().map(|&l| Ok(&self.get(l)?.spectral_l)).collect()
    }

    pub fn spectral_a(&self, levels: &[Level]) -> Result<Vec<&SpectralFactorization>> {
        levels.iter().map(|&l| Ok(&self.get(l)?.spectral_a)).collect()
    }
}
