//! Sparse-grid combination technique for the higher moments: level-index
//! schemes, dimension counts and inter-grid transfer of moment tensors.

use crate::error::{Error, Result};
use crate::fem1d::{self, Level};
use crate::tensor::{mode_apply, ModeOperator, MomentTensor};

/// Per-mode refinement levels of one component grid.
pub type LevelIndex = Vec<Level>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinationScheme {
    order: usize,
    level: Level,
    terms: Vec<(LevelIndex, i64)>,
}

impl CombinationScheme {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn terms(&self) -> &[(LevelIndex, i64)] {
        &self.terms
    }

    /// Total number of stored coefficients over all component grids.
    pub fn storage(&self) -> usize {
        self.terms.iter().map(|(l, _)| l.iter().map(|&j| fem1d::dim(j)).product::<usize>()).sum()
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// All `l ∈ N^k` with `l_i ≥ 1` and `|l|₁ = sum`, in lexicographic order.
fn compositions(k: usize, sum: u32) -> Vec<LevelIndex> {
    fn rec(k: usize, sum: u32, prefix: &mut Vec<Level>, out: &mut Vec<LevelIndex>) {
        if k == 1 {
            prefix.push(sum);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        let rest = (k - 1) as u32;
        for first in 1..=sum - rest {
            prefix.push(first);
            rec(k - 1, sum - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if k == 0 || (sum as usize) < k {
        return out;
    }
    rec(k, sum, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Combination scheme for order `k` at target level `J`:
/// shells `|l|₁ = J − q` with coefficient `(−1)^q C(k−1, q)`, `q = 0..k−1`.
pub fn build_scheme(k: usize, level: Level) -> Result<CombinationScheme> {
    if k == 0 {
        return Err(Error::InvalidParameter { name: "k", reason: "order must be at least 1".into() });
    }
    if (level as usize) < k {
        return Err(Error::EmptyScheme { order: k, level });
    }
    let mut terms = Vec::new();
    for q in 0..k {
        let shell = level as i64 - q as i64;
        if shell < k as i64 {
            break;
        }
        let coeff = binomial(k as u64 - 1, q as u64) as i64 * if q % 2 == 0 { 1 } else { -1 };
        for l in compositions(k, shell as u32) {
            terms.push((l, coeff));
        }
    }
    Ok(CombinationScheme { order: k, level, terms })
}

fn increment_dim(j: Level) -> u128 {
    if j == 1 {
        1
    } else {
        1u128 << (j - 1)
    }
}

/// `dim V̂_J(k) = Σ_{|l|₁ ≤ J, l_i ≥ 1} Π dim W_{l_i}`.
pub fn sparse_dim(k: usize, level: Level) -> u128 {
    let jl = level as usize;
    // ways[s] = Σ over l ∈ N^m with |l|₁ = s of Π dim W_{l_i}
    let mut ways = vec![0u128; jl + 1];
    ways[0] = 1;
    for _ in 0..k {
        let mut next = vec![0u128; jl + 1];
        for (s, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for j in 1..=jl - s {
                next[s + j] += w * increment_dim(j as Level);
            }
        }
        ways = next;
    }
    ways.iter().sum()
}

/// `(2^J − 1)^k`, or an error when it does not fit in 128 bits.
pub fn standard_dim(k: usize, level: Level) -> Result<u128> {
    let n = 1u128
        .checked_shl(level)
        .filter(|_| level < 128)
        .map(|p| p - 1)
        .ok_or_else(|| Error::InvalidParameter { name: "J", reason: format!("level {level} too large") })?;
    n.checked_pow(k as u32)
        .ok_or_else(|| Error::InvalidParameter { name: "k", reason: format!("(2^{level}-1)^{k} overflows") })
}

/// Nodal interpolation of a P1 function from one dyadic level onto another.
/// Towards finer levels this is prolongation, towards coarser levels it is
/// injection at the coarse nodes.
#[derive(Debug, Clone)]
pub struct LevelTransfer {
    from: Level,
    to: Level,
    /// Per target row: `(source index, weight)` pairs, at most two.
    rows: Vec<[(usize, f64); 2]>,
}

impl LevelTransfer {
    pub fn new(from: Level, to: Level) -> Result<Self> {
        fem1d::DyadicMesh::new(from)?;
        fem1d::DyadicMesh::new(to)?;
        let n_from = fem1d::dim(from);
        let den = 1u64 << to;
        let rows = (1..=fem1d::dim(to) as u64)
            .map(|i| {
                // target node i sits at source position i * 2^from / 2^to
                let num = i << from;
                let (e, r) = ((num / den) as usize, num % den);
                let theta = r as f64 / den as f64;
                let mut row = [(0usize, 0.0); 2];
                // source node at position p has index p - 1; positions 0 and 2^from are boundary zeros
                if e >= 1 && e <= n_from {
                    row[0] = (e - 1, 1.0 - theta);
                }
                if theta > 0.0 && e < n_from {
                    row[1] = (e, theta);
                }
                row
            })
            .collect();
        Ok(Self { from, to, rows })
    }

    pub fn from_level(&self) -> Level {
        self.from
    }

    pub fn to_level(&self) -> Level {
        self.to
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r[0].1 * u[r[0].0] + r[1].1 * u[r[1].0]).collect()
    }
}

impl ModeOperator for LevelTransfer {
    fn nrows(&self) -> usize {
        self.rows.len()
    }

    fn ncols(&self) -> usize {
        fem1d::dim(self.from)
    }

    fn apply_block(&self, input: &[f64], post: usize, out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            let o = &mut out[r * post..(r + 1) * post];
            let ((a, wa), (b, wb)) = (row[0], row[1]);
            let (sa, sb) = (&input[a * post..(a + 1) * post], &input[b * post..(b + 1) * post]);
            for ((o, x), y) in o.iter_mut().zip(sa).zip(sb) {
                *o = wa * x + wb * y;
            }
        }
    }
}

/// Moves `t` onto the grid `target`: modes are coarsened first (injection),
/// then refined (prolongation), so the result is the nodal interpolant of
/// the represented function on the target grid.
pub fn transfer(t: &MomentTensor, target: &[Level]) -> Result<MomentTensor> {
    if target.len() != t.order() {
        return Err(Error::DimensionMismatch(format!(
            "transfer target has {} modes, tensor has {}",
            target.len(),
            t.order()
        )));
    }
    let mut cur = t.clone();
    for coarsen in [true, false] {
        for (m, &to) in target.iter().enumerate() {
            let from = cur.levels()[m];
            if (coarsen && to < from) || (!coarsen && to > from) {
                cur = mode_apply(&LevelTransfer::new(from, to)?, &cur, m)?;
            }
        }
    }
    Ok(cur)
}

/// `Σ c_i · transfer(t_i, target)`.
pub fn combine_onto<'a>(
    components: impl IntoIterator<Item = (i64, &'a MomentTensor)>,
    target: &[Level],
) -> Result<MomentTensor> {
    let mut acc: Option<MomentTensor> = None;
    for (c, t) in components {
        let moved = if t.levels() == target { t.clone() } else { transfer(t, target)? };
        match acc.as_mut() {
            Some(a) => a.axpy(c as f64, &moved)?,
            None => {
                let mut m = moved;
                if c != 1 {
                    m.scale(c as f64);
                }
                acc = Some(m);
            }
        }
    }
    acc.ok_or_else(|| Error::DimensionMismatch("nothing to combine".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem1d::FemVector;
    use crate::tensor::{outer_product, tensor_norm, Duality, ModeOpSet, QuadraticForm, TensorSpace};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    #[test]
    fn scheme_examples() {
        let s = build_scheme(1, 5).unwrap();
        assert_eq!(s.terms(), &[(vec![5], 1)]);
        let s = build_scheme(2, 3).unwrap();
        let got: BTreeMap<_, _> = s.terms().iter().cloned().collect();
        let want: BTreeMap<_, _> = [(vec![1, 2], 1), (vec![2, 1], 1), (vec![1, 1], -1)].into_iter().collect();
        assert_eq!(got, want);
        let s = build_scheme(3, 5).unwrap();
        let count = |c: i64, sum: u32| {
            s.terms().iter().filter(|(l, k)| *k == c && l.iter().sum::<u32>() == sum).count()
        };
        assert_eq!(count(1, 5), 6);
        assert_eq!(count(-2, 4), 3);
        assert_eq!(count(1, 3), 1);
        assert_eq!(s.terms().len(), 10);
        assert_eq!(build_scheme(3, 2), Err(Error::EmptyScheme { order: 3, level: 2 }));
    }

    /// Brute-force enumeration of {l ≥ 1 : |l|₁ ≤ J} in k dimensions.
    fn all_indices(k: usize, level: Level) -> Vec<LevelIndex> {
        (k as u32..=level).flat_map(|s| compositions(k, s)).collect()
    }

    #[test]
    fn coefficients_telescope_to_sparse_indicator() {
        for k in 1..=4 {
            for level in k as u32..=8 {
                let scheme = build_scheme(k, level).unwrap();
                // every increment index m with m_i ≤ J is covered by components l ≥ m
                for m in all_indices(k, level + k as u32) {
                    if m.iter().any(|&x| x > level) {
                        continue;
                    }
                    let covered: i64 = scheme
                        .terms()
                        .iter()
                        .filter(|(l, _)| l.iter().zip(&m).all(|(a, b)| a >= b))
                        .map(|(_, c)| c)
                        .sum();
                    let inside = m.iter().sum::<u32>() <= level;
                    assert_eq!(covered, inside as i64, "k={k} J={level} m={m:?}");
                }
            }
        }
    }

    #[test]
    fn dims_examples() {
        assert_eq!(sparse_dim(2, 3), 5);
        assert_eq!(standard_dim(2, 3).unwrap(), 49);
        for j in 1..=10 {
            assert_eq!(sparse_dim(1, j), (1u128 << j) - 1);
            assert_eq!(standard_dim(1, j).unwrap(), (1u128 << j) - 1);
        }
        assert!(standard_dim(20, 12).is_err());
    }

    #[test]
    fn sparse_dim_matches_enumeration() {
        for k in 1..=4 {
            for level in 1..=8 {
                let want: u128 = all_indices(k, level)
                    .iter()
                    .map(|l| l.iter().map(|&j| increment_dim(j)).product::<u128>())
                    .sum();
                assert_eq!(sparse_dim(k, level), want);
            }
        }
    }

    #[test]
    fn sparse_dim_monotone_in_level() {
        for k in 1..=5 {
            for level in 1..=10 {
                assert!(sparse_dim(k, level + 1) > sparse_dim(k, level) || level + 1 < k as u32);
            }
        }
        // not monotone in k: near J = k only few index vectors remain
        assert_eq!(sparse_dim(3, 7), 351);
        assert_eq!(sparse_dim(4, 7), 209);
        assert_eq!(sparse_dim(3, 2), 0);
    }

    #[test]
    fn transfer_identity_and_roundtrip() {
        let mut rng = 0.3_f64;
        let mut next = || {
            rng = (rng * 9301.0 + 49297.0) % 233280.0;
            rng / 233280.0 - 0.5
        };
        let levels = vec![2, 3, 1];
        let len: usize = levels.iter().map(|&l| fem1d::dim(l)).product();
        let t = MomentTensor::new(levels.clone(), (0..len).map(|_| next()).collect(), Duality::Primal).unwrap();
        assert_eq!(transfer(&t, &levels).unwrap(), t);
        let fine = transfer(&t, &[4, 5, 3]).unwrap();
        let back = transfer(&fine, &levels).unwrap();
        assert!(back.max_abs_diff(&t).unwrap() < 1e-12);

        let set = ModeOpSet::new(0.1, 0.0, 5, &QuadraticForm::Convection).unwrap();
        let n0 = tensor_norm(&t, TensorSpace::H, &set.spectral_l(&levels).unwrap()).unwrap();
        let n1 = tensor_norm(&fine, TensorSpace::H, &set.spectral_l(&[4, 5, 3]).unwrap()).unwrap();
        assert!((n0 - n1).abs() < 1e-12 * n0);
    }

    #[test]
    fn level_transfer_matches_prolongate() {
        let u = FemVector::interpolate(3, |x| (x * 2.0).sin() + x * x - 1.0).unwrap();
        let p = fem1d::prolongate(&u).unwrap();
        let t = LevelTransfer::new(3, 4).unwrap().apply(u.coeffs());
        for (a, b) in p.coeffs().iter().zip(&t) {
            assert!((a - b).abs() < 1e-15);
        }
        let down = LevelTransfer::new(4, 2).unwrap().apply(p.coeffs());
        let direct = FemVector::interpolate(2, |x| u.eval(x)).unwrap();
        for (a, b) in down.iter().zip(direct.coeffs()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn combined_interpolation_error_decays() {
        let g = |x: f64| (std::f64::consts::PI * x).sin() * (1.0 + 0.5 * x);
        let fine = 8;
        let set = ModeOpSet::new(0.1, 0.0, fine, &QuadraticForm::Convection).unwrap();
        let facts = set.spectral_l(&[fine, fine]).unwrap();
        let gf = FemVector::interpolate(fine, g).unwrap();
        let exact = outer_product(&[&gf, &gf]).unwrap();
        let mut errs = Vec::new();
        let levels: Vec<Level> = (3..=6).collect();
        for &level in &levels {
            let scheme = build_scheme(2, level).unwrap();
            let comps: Vec<(i64, MomentTensor)> = scheme
                .terms()
                .iter()
                .map(|(l, c)| {
                    let a = FemVector::interpolate(l[0], g).unwrap();
                    let b = FemVector::interpolate(l[1], g).unwrap();
                    (*c, outer_product(&[&a, &b]).unwrap())
                })
                .collect();
            let mut comb = combine_onto(comps.iter().map(|(c, t)| (*c, t)), &[fine, fine]).unwrap();
            comb.axpy(-1.0, &exact).unwrap();
            errs.push(tensor_norm(&comb, TensorSpace::H, &facts).unwrap());
        }
        let n = errs.len() as f64;
        let xs: Vec<f64> = levels.iter().map(|&l| l as f64).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.log2()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!(slope <= -1.5, "slope {slope}, errors {errs:?}");
    }

    proptest! {
        #[test]
        fn scheme_coefficients_sum_to_one(k in 1usize..=5, extra in 0u32..=5) {
            let level = k as u32 + extra;
            let s = build_scheme(k, level).unwrap();
            prop_assert_eq!(s.terms().iter().map(|(_, c)| c).sum::<i64>(), 1);
            for (l, _) in s.terms() {
                prop_assert!(l.iter().all(|&x| x >= 1));
                prop_assert!(l.iter().sum::<u32>() <= level);
            }
        }

        #[test]
        fn transfer_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let mk = |s: u64| {
                let v: Vec<f64> = (0..21).map(|i| (((i as u64 + 1) * (s + 7)) % 13) as f64 - 6.0).collect();
                MomentTensor::new(vec![3, 2], v, Duality::Primal).unwrap()
            };
            let (x, y) = (mk(seed), mk(seed + 1));
            let mut comb = x.clone();
            comb.scale(a);
            comb.axpy(b, &y).unwrap();
            let lhs = transfer(&comb, &[1, 4]).unwrap();
            let mut rhs = transfer(&x, &[1, 4]).unwrap();
            rhs.scale(a);
            rhs.axpy(b, &transfer(&y, &[1, 4]).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
