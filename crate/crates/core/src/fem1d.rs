//! P1 finite elements on dyadic meshes of `[-1, 1]` with homogeneous
//! Dirichlet conditions.
//!
//! Vectors only carry interior nodes. Node `i` (0-based) of level `J` sits at
//! `x = -1 + (i + 1) h` with `h = 2^(1-J)`. Results of forms (`convection_apply`,
//! load vectors, ...) are dual vectors: entry `j` is the pairing with the hat
//! function of node `j`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Refinement level. Level `J` has `2^J` cells.
pub type Level = u32;

/// Largest supported level; keeps dense per-level factorizations tractable.
pub const MAX_LEVEL: Level = 12;

const GAUSS2: [(f64, f64); 2] = [
    (0.211_324_865_405_187_1, 0.5),
    (0.788_675_134_594_812_9, 0.5),
];

const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_3, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DyadicMesh {
    level: Level,
}

impl DyadicMesh {
    pub fn new(level: Level) -> Result<Self> {
        if level == 0 || level > MAX_LEVEL {
            return Err(invalid("level", format!("must be in 1..={MAX_LEVEL}, got {level}")));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn cells(&self) -> usize {
        1usize << self.level
    }

    /// Mesh width on the length-2 domain.
    pub fn h(&self) -> f64 {
        2.0 / self.cells() as f64
    }

    /// Number of interior nodes.
    pub fn n(&self) -> usize {
        self.cells() - 1
    }

    /// Coordinate of interior node `i`.
    pub fn node(&self, i: usize) -> f64 {
        -1.0 + (i + 1) as f64 * self.h()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.node(i)).collect()
    }
}

/// Number of interior nodes on level `level`.
pub fn dim(level: Level) -> usize {
    (1usize << level) - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct FemVector {
    level: Level,
    coeffs: Vec<f64>,
}

impl FemVector {
    pub fn new(level: Level, coeffs: Vec<f64>) -> Result<Self> {
        DyadicMesh::new(level)?;
        if coeffs.len() != dim(level) {
            return Err(Error::DimensionMismatch(format!(
                "level {level} needs {} coefficients, got {}",
                dim(level),
                coeffs.len()
            )));
        }
        Ok(Self { level, coeffs })
    }

    pub fn zeros(level: Level) -> Self {
        Self { level, coeffs: vec![0.0; dim(level)] }
    }

    /// Nodal interpolant of `f`.
    pub fn interpolate(level: Level, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mesh = DyadicMesh::new(level)?;
        Ok(Self { level, coeffs: mesh.nodes().into_iter().map(f).collect() })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Value of the finite element function at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        let cells = 1usize << self.level;
        let h = 2.0 / cells as f64;
        let s = ((x + 1.0) / h).clamp(0.0, cells as f64);
        let e = (s.floor() as usize).min(cells - 1);
        let xi = s - e as f64;
        let node = |g: usize| if g == 0 || g == cells { 0.0 } else { self.coeffs[g - 1] };
        node(e) * (1.0 - xi) + node(e + 1) * xi
    }

    fn check_same_level(&self, other: &FemVector) -> Result<()> {
        if self.level != other.level {
            return Err(Error::LevelMismatch { expected: self.level, found: other.level });
        }
        Ok(())
    }
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagSym {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl TridiagSym {
    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if diag.is_empty() || off.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch(format!(
                "tridiagonal needs off.len() = diag.len() - 1, got {} and {}",
                off.len(),
                diag.len()
            )));
        }
        Ok(Self { diag, off })
    }

    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n();
        assert_eq!(x.len(), n);
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            y[i] = s;
        }
    }

    /// `xᵀ T x`.
    pub fn quad(&self, x: &[f64]) -> f64 {
        let tx = self.apply(x);
        x.iter().zip(&tx).map(|(a, b)| a * b).sum()
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &TridiagSym, b: f64) -> TridiagSym {
        TridiagSym {
            diag: self.diag.iter().zip(&other.diag).map(|(x, y)| a * x + b * y).collect(),
            off: self.off.iter().zip(&other.off).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i + 1 == j {
                self.off[i]
            } else if j + 1 == i {
                self.off[j]
            } else {
                0.0
            }
        })
    }

    /// Solves `T x = b` by elimination without pivoting (T positive definite
    /// or diagonally dominant).
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        solve_tridiag(&self.off, &self.diag, &self.off, b)
    }
}

/// Thomas algorithm for a general tridiagonal system with sub-diagonal
/// `lower`, diagonal `diag` and super-diagonal `upper`.
pub fn solve_tridiag(lower: &[f64], diag: &[f64], upper: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if b.len() != n || lower.len() + 1 != n || upper.len() + 1 != n {
        return Err(Error::DimensionMismatch("tridiagonal solve".into()));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if piv.abs() < f64::MIN_POSITIVE {
        return Err(Error::Numerical("zero pivot in tridiagonal solve".into()));
    }
    c[0] = if n > 1 { upper[0] / piv } else { 0.0 };
    d[0] = b[0] / piv;
    for i in 1..n {
        piv = diag[i] - lower[i - 1] * c[i - 1];
        if piv.abs() < f64::MIN_POSITIVE || !piv.is_finite() {
            return Err(Error::Numerical(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        if i + 1 < n {
            c[i] = upper[i] / piv;
        }
        d[i] = (b[i] - lower[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Mass matrix of the interior hat functions.
pub fn assemble_mass(level: Level) -> Result<TridiagSym> {
    let mesh = DyadicMesh::new(level)?;
    let h = mesh.h();
    TridiagSym::new(vec![2.0 * h / 3.0; mesh.n()], vec![h / 6.0; mesh.n() - 1])
}

/// Stiffness matrix (discrete `-Δ`).
pub fn assemble_stiffness(level: Level) -> Result<TridiagSym> {
    let mesh = DyadicMesh::new(level)?;
    let h = mesh.h();
    TridiagSym::new(vec![2.0 / h; mesh.n()], vec![-1.0 / h; mesh.n() - 1])
}

/// `A_h = nu K - lambda_destab M`, the weak form of `-nu Δ - lambda`.
pub fn assemble_linear_operator(nu: f64, lambda_destab: f64, level: Level) -> Result<TridiagSym> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(invalid("nu", format!("viscosity must be positive, got {nu}")));
    }
    if !lambda_destab.is_finite() {
        return Err(invalid("lambda_destab", "must be finite"));
    }
    let k = assemble_stiffness(level)?;
    let m = assemble_mass(level)?;
    Ok(k.combine(nu, &m, -lambda_destab))
}

/// `L_h = K + M`, the discrete `-Δ + I`.
pub fn assemble_l(level: Level) -> Result<TridiagSym> {
    Ok(assemble_stiffness(level)?.combine(1.0, &assemble_mass(level)?, 1.0))
}

fn with_boundary(u: &[f64]) -> Vec<f64> {
    let mut ext = Vec::with_capacity(u.len() + 2);
    ext.push(0.0);
    ext.extend_from_slice(u);
    ext.push(0.0);
    ext
}

/// `w_j = ½ ∫ (u v)' φ_j dx`, integrated exactly by 2-point Gauss per cell.
pub fn convection_apply(u: &FemVector, v: &FemVector) -> Result<Vec<f64>> {
    u.check_same_level(v)?;
    let cells = 1usize << u.level;
    let h = 2.0 / cells as f64;
    let ue = with_boundary(&u.coeffs);
    let ve = with_boundary(&v.coeffs);
    let mut out = vec![0.0; u.len()];
    for e in 0..cells {
        let (u0, u1, v0, v1) = (ue[e], ue[e + 1], ve[e], ve[e + 1]);
        let du = (u1 - u0) / h;
        let dv = (v1 - v0) / h;
        let (mut left, mut right) = (0.0, 0.0);
        for &(xi, w) in &GAUSS2 {
            let uq = u0 * (1.0 - xi) + u1 * xi;
            let vq = v0 * (1.0 - xi) + v1 * xi;
            let d = du * vq + uq * dv;
            left += w * d * (1.0 - xi);
            right += w * d * xi;
        }
        if e > 0 {
            out[e - 1] += 0.5 * h * left;
        }
        if e + 1 < cells {
            out[e] += 0.5 * h * right;
        }
    }
    Ok(out)
}

/// Full mass matrix on all `cells + 1` nodes including the boundary.
fn full_mass_apply(level: Level, v_ext: &[f64]) -> Vec<f64> {
    let cells = 1usize << level;
    let h = 2.0 / cells as f64;
    let mut out = vec![0.0; cells + 1];
    for e in 0..cells {
        let (a, b) = (v_ext[e], v_ext[e + 1]);
        out[e] += h / 6.0 * (2.0 * a + b);
        out[e + 1] += h / 6.0 * (a + 2.0 * b);
    }
    out
}

/// Nodal values `K(x_i, x_j)` of a scalar interaction kernel on every node
/// (boundary included) of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    level: Level,
    values: DMatrix<f64>,
}

impl KernelMatrix {
    pub fn from_fn(level: Level, kernel: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let mesh = DyadicMesh::new(level)?;
        let m = mesh.cells() + 1;
        let h = mesh.h();
        let x = |i: usize| -1.0 + i as f64 * h;
        let values = DMatrix::from_fn(m, m, |i, j| kernel(x(i), x(j)));
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("kernel", "kernel must be bounded on the mesh"));
        }
        Ok(Self { level, values })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    /// Sup-norm of the P1 interpolant of the kernel.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `g(x_i) = ∫ v(x') K(x_i, x') dx'` at all nodes, using the P1 mass matrix.
    fn inner_integral(&self, v: &[f64]) -> Vec<f64> {
        let mv = full_mass_apply(self.level, &with_boundary(v));
        let mv = DVector::from_vec(mv);
        (&self.values * mv).data.as_vec().clone()
    }
}

/// One-sided nonlocal form `⟨B̂(u, v), φ_j⟩ = -∫ φ_j' u(x) ∫ v(x') K(x, x') dx' dx`.
pub fn nonlocal_apply_one_sided(u: &FemVector, v: &FemVector, kernel: &KernelMatrix) -> Result<Vec<f64>> {
    u.check_same_level(v)?;
    if kernel.level != u.level {
        return Err(Error::LevelMismatch { expected: u.level, found: kernel.level });
    }
    let cells = 1usize << u.level;
    let h = 2.0 / cells as f64;
    let g = kernel.inner_integral(&v.coeffs);
    let ue = with_boundary(&u.coeffs);
    let mut out = vec![0.0; u.len()];
    for e in 0..cells {
        let mut ug = 0.0;
        for &(xi, w) in &GAUSS2 {
            let uq = ue[e] * (1.0 - xi) + ue[e + 1] * xi;
            let gq = g[e] * (1.0 - xi) + g[e + 1] * xi;
            ug += w * uq * gq;
        }
        ug *= h;
        // φ_left' = -1/h, φ_right' = +1/h on this cell
        if e > 0 {
            out[e - 1] += ug / h;
        }
        if e + 1 < cells {
            out[e] -= ug / h;
        }
    }
    Ok(out)
}

/// Symmetrized nonlocal interaction form `½(B̂(u, v) + B̂(v, u))`.
pub fn nonlocal_apply(u: &FemVector, v: &FemVector, kernel: &KernelMatrix) -> Result<Vec<f64>> {
    let a = nonlocal_apply_one_sided(u, v, kernel)?;
    let b = nonlocal_apply_one_sided(v, u, kernel)?;
    Ok(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect())
}

/// Sparse trilinear tensor `b[a, b, j] = ⟨B(φ_a, φ_b), φ_j⟩` of one level.
///
/// Used for fiber-wise contractions inside the moment tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrilinearForm {
    level: Level,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl TrilinearForm {
    /// Burgers convection `½(u v)'`, assembled in closed form after
    /// integration by parts: `b[a,b,j] = -½ ∫ φ_a φ_b φ_j'`.
    pub fn convection(level: Level) -> Result<Self> {
        let mesh = DyadicMesh::new(level)?;
        let cells = mesh.cells();
        let h = mesh.h();
        let mut acc = std::collections::BTreeMap::new();
        for e in 0..cells {
            let global = [e, e + 1];
            let dphi = [-1.0 / h, 1.0 / h];
            for la in 0..2 {
                for lb in 0..2 {
                    let mass = if la == lb { h / 3.0 } else { h / 6.0 };
                    for lj in 0..2 {
                        let (ga, gb, gj) = (global[la], global[lb], global[lj]);
                        if [ga, gb, gj].iter().any(|&g| g == 0 || g == cells) {
                            continue;
                        }
                        *acc.entry((ga - 1, gb - 1, gj - 1)).or_insert(0.0) += -0.5 * mass * dphi[lj];
                    }
                }
            }
        }
        let entries = acc.into_iter().filter(|(_, v)| *v != 0.0).map(|((a, b, j), v)| (a, b, j, v)).collect();
        Ok(Self { level, entries })
    }

    /// Symmetrized nonlocal form. For each `b` the inner integral against
    /// `φ_b` is formed once, then cell integrals are taken in closed form.
    pub fn nonlocal(kernel: &KernelMatrix) -> Result<Self> {
        let level = kernel.level;
        let n = dim(level);
        let cells = 1usize << level;
        let h = 2.0 / cells as f64;
        let mut acc = std::collections::BTreeMap::new();
        for b in 0..n {
            let mut unit = vec![0.0; n];
            unit[b] = 1.0;
            let g = kernel.inner_integral(&unit);
            for e in 0..cells {
                let (g0, g1) = (g[e], g[e + 1]);
                // ∫_cell φ_a g for a = left, right node of the cell
                let int = [h / 6.0 * (2.0 * g0 + g1), h / 6.0 * (g0 + 2.0 * g1)];
                let dphi = [-1.0 / h, 1.0 / h];
                let global = [e, e + 1];
                for la in 0..2 {
                    for lj in 0..2 {
                        let (ga, gj) = (global[la], global[lj]);
                        if ga == 0 || ga == cells || gj == 0 || gj == cells {
                            continue;
                        }
                        let v = -dphi[lj] * int[la];
                        *acc.entry((ga - 1, b, gj - 1)).or_insert(0.0) += 0.5 * v;
                        *acc.entry((b, ga - 1, gj - 1)).or_insert(0.0) += 0.5 * v;
                    }
                }
            }
        }
        let entries = acc.into_iter().map(|((a, b, j), v)| (a, b, j, v)).collect();
        Ok(Self { level, entries })
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.entries
    }

    pub fn apply(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; dim(self.level)];
        for &(a, b, j, val) in &self.entries {
            out[j] += val * u[a] * v[b];
        }
        out
    }

    /// Jacobian of `u ↦ B(u, u)` at `u`, as a dense matrix `J[j, a]`.
    pub fn linearize(&self, u: &[f64]) -> DMatrix<f64> {
        let n = dim(self.level);
        let mut jac = DMatrix::zeros(n, n);
        for &(a, b, j, val) in &self.entries {
            jac[(j, a)] += val * u[b];
            jac[(j, b)] += val * u[a];
        }
        jac
    }
}

/// Nodal prolongation to the next finer level (exact, by nestedness).
pub fn prolongate(u: &FemVector) -> Result<FemVector> {
    let fine = u.level + 1;
    DyadicMesh::new(fine)?;
    let ue = with_boundary(&u.coeffs);
    let nf = dim(fine);
    let coeffs = (0..nf)
        .map(|i| {
            let g = i + 1;
            if g % 2 == 0 {
                ue[g / 2]
            } else {
                0.5 * (ue[g / 2] + ue[g / 2 + 1])
            }
        })
        .collect();
    Ok(FemVector { level: fine, coeffs })
}

/// Transpose of [`prolongate`], acting on dual vectors of level `J + 1`.
pub fn restrict(dual: &[f64], fine_level: Level) -> Result<Vec<f64>> {
    if fine_level < 2 {
        return Err(invalid("fine_level", "must be at least 2"));
    }
    if dual.len() != dim(fine_level) {
        return Err(Error::DimensionMismatch("restrict: dual length".into()));
    }
    let nc = dim(fine_level - 1);
    let mut out = vec![0.0; nc];
    for (i, &d) in dual.iter().enumerate() {
        let g = i + 1;
        if g % 2 == 0 {
            out[g / 2 - 1] += d;
        } else {
            let (l, r) = (g / 2, g / 2 + 1);
            if l >= 1 {
                out[l - 1] += 0.5 * d;
            }
            if r <= nc {
                out[r - 1] += 0.5 * d;
            }
        }
    }
    Ok(out)
}

/// Generalized eigenpairs `L V = M V diag(λ)`, `Vᵀ M V = I`, ascending.
#[derive(Debug, Clone)]
pub struct SpectralFactorization {
    level: Level,
    eigenvalues: Vec<f64>,
    vectors: DMatrix<f64>,
    vectors_t: DMatrix<f64>,
    mass: TridiagSym,
}

impl SpectralFactorization {
    pub fn level(&self) -> Level {
        self.level
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Columns are the M-orthonormal eigenvectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn vectors_t(&self) -> &DMatrix<f64> {
        &self.vectors_t
    }

    pub fn mass(&self) -> &TridiagSym {
        &self.mass
    }

    /// `(u, φ_i)_H = (Vᵀ M u)_i` for a primal coefficient vector.
    pub fn primal_coefficients(&self, u: &[f64]) -> Vec<f64> {
        let mu = DVector::from_vec(self.mass.apply(u));
        (&self.vectors_t * mu).data.as_vec().clone()
    }

    /// `⟨g, φ_i⟩ = (Vᵀ g)_i` for a dual (load) vector.
    pub fn dual_coefficients(&self, g: &[f64]) -> Vec<f64> {
        (&self.vectors_t * DVector::from_column_slice(g)).data.as_vec().clone()
    }
}

/// Symmetric-definite generalized eigendecomposition of `(op, mass)` via the
/// Cholesky factor of the mass matrix.
pub fn generalized_eig(op: &TridiagSym, mass: &TridiagSym, level: Level) -> Result<SpectralFactorization> {
    let n = mass.n();
    if op.n() != n || n != dim(level) {
        return Err(Error::DimensionMismatch("generalized_eig: operator sizes".into()));
    }
    let chol = nalgebra::Cholesky::new(mass.to_dense())
        .ok_or_else(|| Error::Numerical("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let a = op.to_dense();
    // C = L⁻¹ A L⁻ᵀ
    let x = l
        .solve_lower_triangular(&a)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let q = l
        .transpose()
        .solve_upper_triangular(&eig.eigenvectors)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite generalized eigenvalue".into()));
    }
    let vectors = DMatrix::from_fn(n, n, |r, c| q[(r, order[c])]);
    let vectors_t = vectors.transpose();
    Ok(SpectralFactorization { level, eigenvalues, vectors, vectors_t, mass: mass.clone() })
}

pub fn norm_h(u: &FemVector) -> f64 {
    let m = assemble_mass(u.level).expect("level validated on construction");
    m.quad(&u.coeffs).max(0.0).sqrt()
}

pub fn norm_v(u: &FemVector) -> f64 {
    let l = assemble_l(u.level).expect("level validated on construction");
    l.quad(&u.coeffs).max(0.0).sqrt()
}

/// `‖u‖²_{V^α} = Σ λ_i^α (u, φ_i)²` with the eigenpairs of `(K + M, M)`.
pub fn norm_valpha(u: &FemVector, alpha: f64, fact: &SpectralFactorization) -> Result<f64> {
    if fact.level != u.level {
        return Err(Error::LevelMismatch { expected: u.level, found: fact.level });
    }
    let c = fact.primal_coefficients(&u.coeffs);
    Ok(c.iter().zip(&fact.eigenvalues).map(|(c, l)| l.powf(alpha) * c * c).sum::<f64>().sqrt())
}

/// `‖g‖_{V'} = sqrt(gᵀ L⁻¹ g)` for a dual vector on `level`.
pub fn dual_norm_v(g: &[f64], level: Level) -> Result<f64> {
    let l = assemble_l(level)?;
    let x = l.solve(g)?;
    Ok(g.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
}

/// Exact `L¹` norm of a P1 function.
pub fn norm_l1(u: &FemVector) -> f64 {
    let cells = 1usize << u.level;
    let h = 2.0 / cells as f64;
    let ue = with_boundary(&u.coeffs);
    (0..cells)
        .map(|e| {
            let (a, b) = (ue[e], ue[e + 1]);
            if a * b >= 0.0 {
                0.5 * h * (a.abs() + b.abs())
            } else {
                0.5 * h * (a * a + b * b) / (a.abs() + b.abs())
            }
        })
        .sum()
}

/// Load vector `∫ f φ_j dx`, 3-point Gauss per cell (exact for polynomials up
/// to degree 4 in `f`).
pub fn load_vector(level: Level, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let mesh = DyadicMesh::new(level)?;
    let cells = mesh.cells();
    let h = mesh.h();
    let mut out = vec![0.0; mesh.n()];
    for e in 0..cells {
        let x0 = -1.0 + e as f64 * h;
        let (mut left, mut right) = (0.0, 0.0);
        for &(xi, w) in &GAUSS3 {
            let fx = f(x0 + xi * h);
            left += w * fx * (1.0 - xi);
            right += w * fx * xi;
        }
        if e > 0 {
            out[e - 1] += h * left;
        }
        if e + 1 < cells {
            out[e] += h * right;
        }
    }
    Ok(out)
}
