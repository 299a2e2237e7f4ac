//! Perturbed critical points of a symmetric tensor family: contraction-map
//! iteration and the equivalent tree-sum expansion.
//!
//! A family describes `τ^x(y) = T_1^x y + ½ B(y,y) + Σ_{l≥3} T_l^x(y…y)/l!`
//! with `B` reduced to the identity and `T_2 = 0`; the linear coefficients
//! vanish at `x = 0`. The near-origin critical point is computed three ways:
//!
//! - [`fixed_point_iterate`]: iterate `g^x(y) = y − B⁻¹ ∂_y τ^x(y)` from 0;
//! - [`height_truncated_sum`]: the tree sum over types of height ≤ h,
//!   regrouped level-by-level via the contraction weights;
//! - [`crit_series`]: the full Taylor expansion in `x`, as an explicit sum of
//!   per-tree amplitudes `A^x_Γ / |Aut Γ|` over trees with at most `d` leaves.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::algebra::{factorial, AlgebraError, MultiIndex, SymmetricCoefficients, TruncatedSeries};
use crate::trees::{self, LabeledRootedTree, TreeFamilySpec};

#[derive(Debug, Error)]
pub enum CriticalError {
    #[error("pairing is not positive definite (pivot {0:.3e})")]
    NotSpd(f64),
    #[error("degree-2 perturbation must vanish")]
    QuadraticTermPresent,
    #[error("linear coefficient has nonzero constant term (label {0})")]
    LinearConstantTerm(usize),
    #[error("iteration diverged at step {0} (outside the contraction region)")]
    Diverged(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Symmetric tensors of a perturbed function, entries as series in `x`.
#[derive(Clone, Debug)]
pub struct TensorFamily {
    dim: usize,
    vars: usize,
    max_degree_x: u32,
    tensors: BTreeMap<usize, SymmetricCoefficients<TruncatedSeries>>,
}

impl TensorFamily {
    pub fn new(dim: usize, vars: usize, max_degree_x: u32) -> Self {
        TensorFamily {
            dim,
            vars,
            max_degree_x,
            tensors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn max_degree_x(&self) -> u32 {
        self.max_degree_x
    }

    /// Sets `θ_{labels}` for the degree-`labels.len()` tensor.
    ///
    /// Degree-2 entries are rejected, and degree-1 entries must vanish at
    /// `x = 0` (the unperturbed critical point sits at the origin).
    pub fn set(&mut self, labels: &[usize], series: TruncatedSeries) -> Result<(), CriticalError> {
        let l = labels.len();
        if l == 2 && !series.is_zero() {
            return Err(CriticalError::QuadraticTermPresent);
        }
        if l == 1 && series.coefficient(&MultiIndex::zero(self.vars)) != 0.0 {
            return Err(CriticalError::LinearConstantTerm(labels[0]));
        }
        let entry = self
            .tensors
            .entry(l)
            .or_insert_with(|| SymmetricCoefficients::new(self.dim, l));
        entry.set(labels, series)?;
        Ok(())
    }

    pub fn theta(&self, labels: &[usize]) -> Option<&TruncatedSeries> {
        self.tensors.get(&labels.len()).and_then(|t| t.get(labels))
    }

    pub fn max_tensor_degree(&self) -> usize {
        self.tensors.keys().max().copied().unwrap_or(1)
    }

    /// Evaluates every entry at the point `x`.
    fn at_point(&self, x: &[f64]) -> Result<NumericTensors, CriticalError> {
        let mut by_degree = BTreeMap::new();
        for (&l, coeffs) in &self.tensors {
            let mut map = BTreeMap::new();
            for (labels, series) in coeffs.entries() {
                let v = series.evaluate(x)?;
                if v != 0.0 {
                    map.insert(labels.clone(), v);
                }
            }
            by_degree.insert(l, map);
        }
        Ok(NumericTensors { by_degree })
    }

    /// Labels whose linear coefficient is not identically zero — the
    /// admissible leaf labels of the tree expansion.
    fn leaf_labels(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|&i| self.theta(&[i]).map(|s| !s.is_zero()).unwrap_or(false))
            .collect()
    }

    /// True when every linear entry is a single monomial and every higher
    /// entry is constant in `x`; amplitudes are then scalar × monomial and
    /// the expansion runs on a compact pool representation.
    fn monomial_weighted(&self) -> bool {
        if self.vars > PACK_MAX_VARS
            || self.dim > PACK_MAX_VARS
            || self.max_degree_x > PACK_MAX_DEGREE
        {
            return false;
        }
        for (&l, coeffs) in &self.tensors {
            for (_, series) in coeffs.entries() {
                let nonzero = series.terms().filter(|(_, c)| *c != 0.0).count();
                if l == 1 {
                    if nonzero > 1 {
                        return false;
                    }
                } else if nonzero > 1 || series.terms().any(|(i, c)| c != 0.0 && i.degree() != 0) {
                    return false;
                }
            }
        }
        true
    }
}

/// Congruence-transforms a family so that the given symmetric positive
/// definite pairing becomes the identity: with `B = L·Lᵀ`, the new
/// coordinates are `z = Lᵀ y`, and tensors pull back through `y = L⁻ᵀ z`.
pub fn reduce_pairing(
    b: &[Vec<f64>],
    family: &TensorFamily,
    tol: f64,
) -> Result<TensorFamily, CriticalError> {
    let m = family.dim();
    let mat = nalgebra::DMatrix::from_fn(m, m, |i, j| b[i][j]);
    let chol = nalgebra::Cholesky::new(mat).ok_or(CriticalError::NotSpd(f64::NAN))?;
    let l = chol.l();
    let min_pivot = (0..m).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= tol {
        return Err(CriticalError::NotSpd(min_pivot));
    }
    let minv = l
        .transpose()
        .try_inverse()
        .ok_or(CriticalError::NotSpd(min_pivot))?;

    let mut out = TensorFamily::new(m, family.vars, family.max_degree_x);
    for (&deg, coeffs) in &family.tensors {
        let inputs = ordered_tuples(m, deg);
        for j_tuple in sorted_tuples(m, deg) {
            let mut acc = TruncatedSeries::zero(family.vars, family.max_degree_x);
            for i_tuple in &inputs {
                if let Some(theta) = coeffs.get(i_tuple) {
                    let w: f64 = i_tuple
                        .iter()
                        .zip(&j_tuple)
                        .map(|(&i, &j)| minv[(i, j)])
                        .product();
                    if w != 0.0 {
                        acc = acc.add(&theta.scale(w))?;
                    }
                }
            }
            acc.prune(0.0);
            if !acc.is_zero() {
                out.set(&j_tuple, acc)?;
            }
        }
    }
    Ok(out)
}

fn ordered_tuples(m: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..degree {
        let mut next = Vec::with_capacity(out.len() * m);
        for t in &out {
            for l in 0..m {
                let mut t2 = t.clone();
                t2.push(l);
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

fn sorted_tuples(m: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn go(
        m: usize,
        remaining: usize,
        start: usize,
        current: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            out.push(current.clone());
            return;
        }
        for l in start..m {
            current.push(l);
            go(m, remaining - 1, l, current, out);
            current.pop();
        }
    }
    go(m, degree, 0, &mut Vec::new(), &mut out);
    out
}

/// Tensor entries evaluated at a point.
struct NumericTensors {
    by_degree: BTreeMap<usize, BTreeMap<Vec<usize>, f64>>,
}

impl NumericTensors {
    fn linear(&self, i: usize) -> f64 {
        self.by_degree
            .get(&1)
            .and_then(|m| m.get(&vec![i]))
            .copied()
            .unwrap_or(0.0)
    }

    /// Adds `Σ_{l≥3} Σ_{F ∋ i} θ_F · y^{F∖i} / ∏ mult(F∖i)!` into `out[i]`.
    fn pull_higher(&self, y: &[f64], out: &mut [f64]) {
        for (&l, entries) in &self.by_degree {
            if l < 3 {
                continue;
            }
            for (labels, &theta) in entries {
                let mut prev = usize::MAX;
                for pos in 0..labels.len() {
                    let i = labels[pos];
                    if i == prev {
                        continue; // one pull per distinct label
                    }
                    prev = i;
                    let mut prod = 1.0;
                    let mut mult_fact = 1.0;
                    let mut run_label = usize::MAX;
                    let mut run = 0u64;
                    for (q, &j) in labels.iter().enumerate() {
                        if q == pos {
                            continue;
                        }
                        prod *= y[j];
                        if j == run_label {
                            run += 1;
                        } else {
                            mult_fact *= factorial(run) as f64;
                            run_label = j;
                            run = 1;
                        }
                    }
                    mult_fact *= factorial(run) as f64;
                    out[i] += theta * prod / mult_fact;
                }
            }
        }
    }
}

/// Gradient `∂_y τ^x(y)` in the reduced coordinates (B = identity):
/// `f_i = θ_i(x) + y_i + Σ_{l≥3} T_l contributions`.
pub fn gradient(family: &TensorFamily, x: &[f64], y: &[f64]) -> Result<Vec<f64>, CriticalError> {
    let tensors = family.at_point(x)?;
    let mut f: Vec<f64> = y.to_vec();
    for (i, fi) in f.iter_mut().enumerate() {
        *fi += tensors.linear(i);
    }
    tensors.pull_higher(y, &mut f);
    Ok(f)
}

/// `y_h`: the h-fold application of `g^x(y) = y − ∂_y τ^x(y)` to 0.
///
/// Divergence (‖y‖ exceeding ten times the initial step for three
/// consecutive iterations) signals `x` outside the contraction region.
pub fn fixed_point_iterate(
    family: &TensorFamily,
    x: &[f64],
    h: usize,
) -> Result<Vec<f64>, CriticalError> {
    let tensors = family.at_point(x)?;
    let m = family.dim();
    let mut y = vec![0.0; m];
    let mut bound = f64::INFINITY;
    let mut over = 0usize;
    for step in 1..=h {
        let mut f: Vec<f64> = y.clone();
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += tensors.linear(i);
        }
        tensors.pull_higher(&y, &mut f);
        for (yi, fi) in y.iter_mut().zip(&f) {
            *yi -= fi;
        }
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if step == 1 {
            bound = 10.0 * norm.max(f64::MIN_POSITIVE);
        } else if norm > bound {
            over += 1;
            if over >= 3 {
                return Err(CriticalError::Diverged(step));
            }
        } else {
            over = 0;
        }
    }
    Ok(y)
}

/// Sum of `A^x_Γ/|Aut Γ|` over isomorphism types of height ≤ `h`, evaluated
/// at `x`.
///
/// Types of height ≤ h+1 are the trees whose root carries a multiset of
/// height-≤h subtrees; summing amplitude/aut over a multiset level collapses
/// to the contraction weights `−S_l/l!` on the level sums, which is how the
/// sum is computed. Explicit per-type enumeration (tractable only at small
/// heights) is cross-checked in tests.
pub fn height_truncated_sum(
    family: &TensorFamily,
    x: &[f64],
    h: usize,
) -> Result<Vec<f64>, CriticalError> {
    let tensors = family.at_point(x)?;
    let m = family.dim();
    let mut u = vec![0.0; m];
    for _ in 0..h {
        let mut t: Vec<f64> = (0..m).map(|i| tensors.linear(i)).collect();
        tensors.pull_higher(&u, &mut t);
        u = t.iter().map(|v| -v).collect();
    }
    Ok(u)
}

/// The critical point's Taylor expansion: one series per coordinate.
#[derive(Clone, Debug)]
pub struct CritSeries {
    pub coords: Vec<TruncatedSeries>,
    /// Trees with structurally nonzero amplitude per coordinate, keyed by the
    /// monomial they feed (populated on the compact path).
    pub tree_counts: Option<Vec<BTreeMap<MultiIndex, u64>>>,
}

/// Expands the critical point as the sum over labeled rooted trees with at
/// most `max_order` leaves: every vertex except v_out is weighted `−θ` of
/// its incident labels, and each type contributes amplitude/|Aut|.
pub fn crit_series(family: &TensorFamily, max_order: u32) -> Result<CritSeries, CriticalError> {
    if family.monomial_weighted() {
        crit_series_scalar(family, max_order)
    } else {
        crit_series_general(family, max_order)
    }
}

const PACK_MAX_VARS: usize = 8;
const PACK_MAX_DEGREE: u32 = 255;

fn pack_exp(idx: &MultiIndex) -> u64 {
    let mut packed = 0u64;
    for (slot, &e) in idx.0.iter().enumerate() {
        packed |= (e as u64) << (8 * slot);
    }
    packed
}

fn unpack_exp(packed: u64, vars: usize) -> MultiIndex {
    MultiIndex(
        (0..vars)
            .map(|slot| ((packed >> (8 * slot)) & 0xff) as u32)
            .collect(),
    )
}

/// Compact expansion: amplitudes are scalar × monomial, so subtree pools
/// store `(label, aut, exponent, degree, coefficient)` per entry and nothing
/// else — subtree values fold bottom-up at construction. Entries are grouped
/// in contiguous ranges by leaf count, and child multisets are enumerated as
/// nondecreasing index sequences walked range-by-range, so every isomorphism
/// type arises exactly once and the walk never scans candidates that cannot
/// fit the remaining leaf budget. Multisets with a structurally zero
/// coupling are dropped, which cannot change any value.
fn crit_series_scalar(family: &TensorFamily, max_order: u32) -> Result<CritSeries, CriticalError> {
    let m = family.dim();
    let vars = family.vars();
    let d = family.max_degree_x();
    let max_children = family.max_tensor_degree().saturating_sub(1);

    // Internal couplings (constant in x) keyed by packed per-label counts.
    let mut couplings: BTreeMap<u64, f64> = BTreeMap::new();
    for (labels, series) in family
        .tensors
        .iter()
        .filter(|(&l, _)| l >= 3)
        .flat_map(|(_, coeffs)| coeffs.entries())
    {
        let c = series.coefficient(&MultiIndex::zero(vars));
        if c != 0.0 {
            couplings.insert(pack_label_counts(labels), c);
        }
    }

    // Leaf weights −θ_i, a single monomial each.
    let leaf_w: Vec<Option<(u64, u32, f64)>> = (0..m)
        .map(|i| {
            family.theta(&[i]).and_then(|s| {
                s.terms()
                    .find(|(_, c)| *c != 0.0)
                    .map(|(idx, c)| (pack_exp(idx), idx.degree(), -c))
            })
        })
        .collect();

    let mut pool = ScalarPool::new();
    for (label, w) in leaf_w.iter().enumerate() {
        if let Some((exp, deg, coeff)) = *w {
            if deg <= d {
                pool.push(label, deg, 1, exp, coeff);
            }
        }
    }
    pool.seal_level();

    // Build levels 2..=max_order; one enumeration pass per level serves all
    // internal labels.
    let mut staged: Vec<(usize, u32, u64, u64, f64)> = Vec::new();
    for total in 2..=max_order {
        staged.clear();
        fold_multisets(&pool, total, 2, max_children, d, &mut |acc| {
            for label in 0..m {
                let key = acc.key + label_key(label);
                if let Some(&theta) = couplings.get(&key) {
                    let coeff = -theta * acc.coeff;
                    if coeff != 0.0 {
                        staged.push((label, acc.deg, acc.aut, acc.exp, coeff));
                    }
                }
            }
        });
        for &(label, deg, aut, exp, coeff) in &staged {
            pool.push(label, deg, aut, exp, coeff);
        }
        pool.seal_level();
    }

    // Root pass: one enumeration per leaf total feeds every output.
    let mut acc_out: Vec<BTreeMap<u64, (f64, u64)>> = vec![BTreeMap::new(); m];
    for (output, w) in leaf_w.iter().enumerate() {
        if let Some((exp, deg, coeff)) = *w {
            if deg <= d {
                let slot = acc_out[output].entry(exp).or_insert((0.0, 0));
                slot.0 += coeff;
                slot.1 += 1;
            }
        }
    }
    for total in 1..=max_order {
        fold_multisets(&pool, total, 2, max_children, d, &mut |acc| {
            for (output, sums) in acc_out.iter_mut().enumerate() {
                let key = acc.key + label_key(output);
                if let Some(&theta) = couplings.get(&key) {
                    let coeff = -theta * acc.coeff / acc.aut as f64;
                    if coeff != 0.0 {
                        let slot = sums.entry(acc.exp).or_insert((0.0, 0));
                        slot.0 += coeff;
                        slot.1 += 1;
                    }
                }
            }
        });
    }

    let mut coords = Vec::with_capacity(m);
    let mut counts: Vec<BTreeMap<MultiIndex, u64>> = Vec::with_capacity(m);
    for sums in acc_out {
        let mut series = TruncatedSeries::zero(vars, d);
        let mut count_map = BTreeMap::new();
        for (exp, (sum, trees)) in sums {
            let idx = unpack_exp(exp, vars);
            series.add_term(idx.clone(), sum);
            count_map.insert(idx, trees);
        }
        series.prune(0.0);
        coords.push(series);
        counts.push(count_map);
    }
    Ok(CritSeries {
        coords,
        tree_counts: Some(counts),
    })
}

/// Accumulated state of one child multiset during the pool walk.
struct MultisetAcc {
    /// Packed per-label counts of the children's parent-edge labels.
    key: u64,
    /// Product of child coefficients.
    coeff: f64,
    /// Sum of child exponent vectors (packed).
    exp: u64,
    /// Total x-degree.
    deg: u32,
    /// `∏ mult! · ∏ child aut`.
    aut: u64,
}

/// Packed per-label count key for coupling lookups: 8 bits per label.
fn label_key(label: usize) -> u64 {
    1u64 << (8 * label)
}

fn pack_label_counts(labels: &[usize]) -> u64 {
    labels.iter().map(|&l| label_key(l)).sum()
}

/// Walks nondecreasing index multisets over the sealed pool levels with the
/// exact leaf budget `total`, accumulating coefficient products, packed
/// exponents, degrees, and automorphism factors along the way. Levels are
/// contiguous index ranges per leaf count, so candidates that cannot fit the
/// remaining budget are skipped wholesale.
fn fold_multisets(
    pool: &ScalarPool,
    total: u32,
    min_children: usize,
    max_children: usize,
    max_degree: u32,
    emit: &mut impl FnMut(&MultisetAcc),
) {
    struct Frame<'a> {
        pool: &'a ScalarPool,
        min_children: usize,
        max_children: usize,
        max_degree: u32,
    }

    #[allow(clippy::too_many_arguments)]
    fn go(
        f: &Frame,
        remaining: u32,
        start: usize,
        children: usize,
        last: usize,
        run: u64,
        acc: MultisetAcc,
        emit: &mut impl FnMut(&MultisetAcc),
    ) {
        if remaining == 0 {
            if children >= f.min_children {
                emit(&acc);
            }
            return;
        }
        if children == f.max_children {
            return;
        }
        for leaves in 1..=remaining.min(f.pool.level_count() as u32) {
            let range = f.pool.level_range(leaves as usize);
            let from = range.start.max(start);
            for i in from..range.end {
                let deg = acc.deg + f.pool.degrees[i];
                if deg > f.max_degree {
                    continue;
                }
                let run_next = if i == last { run + 1 } else { 1 };
                let next = MultisetAcc {
                    key: acc.key + label_key(f.pool.labels[i]),
                    coeff: acc.coeff * f.pool.coeffs[i],
                    exp: acc.exp + f.pool.exps[i],
                    deg,
                    aut: acc.aut * run_next * f.pool.auts[i],
                };
                go(
                    f,
                    remaining - leaves,
                    i,
                    children + 1,
                    i,
                    run_next,
                    next,
                    emit,
                );
            }
        }
    }

    let frame = Frame {
        pool,
        min_children,
        max_children,
        max_degree,
    };
    go(
        &frame,
        total,
        0,
        0,
        usize::MAX,
        0,
        MultisetAcc {
            key: 0,
            coeff: 1.0,
            exp: 0,
            deg: 0,
            aut: 1,
        },
        emit,
    );
}

/// Flat subtree pool with contiguous per-leaf-count levels.
struct ScalarPool {
    labels: Vec<usize>,
    degrees: Vec<u32>,
    auts: Vec<u64>,
    exps: Vec<u64>,
    coeffs: Vec<f64>,
    level_ends: Vec<usize>,
}

impl ScalarPool {
    fn new() -> Self {
        ScalarPool {
            labels: Vec::new(),
            degrees: Vec::new(),
            auts: Vec::new(),
            exps: Vec::new(),
            coeffs: Vec::new(),
            level_ends: Vec::new(),
        }
    }

    fn push(&mut self, label: usize, degree: u32, aut: u64, exp: u64, coeff: f64) {
        self.labels.push(label);
        self.degrees.push(degree);
        self.auts.push(aut);
        self.exps.push(exp);
        self.coeffs.push(coeff);
    }

    /// Marks the end of the current leaf-count level.
    fn seal_level(&mut self) {
        self.level_ends.push(self.labels.len());
    }

    fn level_count(&self) -> usize {
        self.level_ends.len()
    }

    /// Index range of entries with exactly `leaves` leaves (1-based).
    fn level_range(&self, leaves: usize) -> std::ops::Range<usize> {
        let start = if leaves >= 2 {
            self.level_ends[leaves - 2]
        } else {
            0
        };
        start..self.level_ends[leaves - 1]
    }
}

pub(crate) fn crit_series_general(
    family: &TensorFamily,
    max_order: u32,
) -> Result<CritSeries, CriticalError> {
    let m = family.dim();
    let vars = family.vars();
    let d = family.max_degree_x();
    let leaf_labels = family.leaf_labels();
    let zero = TruncatedSeries::zero(vars, d);

    let mut coords = Vec::with_capacity(m);
    for output in 0..m {
        let spec = TreeFamilySpec {
            k: 0,
            output,
            leaf_labels: leaf_labels.clone(),
            internal_labels: (0..m).collect(),
            relax_root: false,
            degenerate_constant: false,
            max_vertex_degree: Some(family.max_tensor_degree()),
        };
        let mut series = TruncatedSeries::zero(vars, d);
        for tree in trees::enumerate_trees(&spec, max_order as usize) {
            let amp = series_amplitude(&tree, family, &zero)?;
            series = series.add(&amp.scale(1.0 / tree.aut_size() as f64))?;
        }
        series.prune(0.0);
        coords.push(series);
    }
    Ok(CritSeries {
        coords,
        tree_counts: None,
    })
}

/// `∏_{v ≠ v_out} (−θ_{incident labels of v})` as a truncated series.
fn series_amplitude(
    tree: &LabeledRootedTree,
    family: &TensorFamily,
    zero: &TruncatedSeries,
) -> Result<TruncatedSeries, CriticalError> {
    use crate::trees::TreeNode;
    fn walk(
        node: &TreeNode,
        family: &TensorFamily,
        zero: &TruncatedSeries,
    ) -> Result<TruncatedSeries, CriticalError> {
        let mut labels: Vec<usize> = Vec::with_capacity(node.children.len() + 1);
        labels.push(node.label);
        for c in &node.children {
            labels.push(c.label);
        }
        labels.sort_unstable();
        let theta = family.theta(&labels).unwrap_or(zero);
        let mut value = theta.scale(-1.0);
        for c in &node.children {
            value = value.mul(&walk(c, family, zero)?)?;
        }
        Ok(value)
    }
    walk(&tree.root, family, zero)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    /// τ = y²/2 − xy + y³/6: θ_1 = −x, θ_3 = 1.
    fn cubic_family(d: u32) -> TensorFamily {
        let mut f = TensorFamily::new(1, 1, d);
        f.set(&[0], TruncatedSeries::variable(1, d, 0, -1.0))
            .unwrap();
        f.set(&[0, 0, 0], TruncatedSeries::constant(1, d, 1.0))
            .unwrap();
        f
    }

    #[test]
    fn invariants_enforced() {
        let mut f = TensorFamily::new(1, 1, 4);
        assert!(f
            .set(&[0, 0], TruncatedSeries::constant(1, 4, 1.0))
            .is_err());
        assert!(f.set(&[0], TruncatedSeries::constant(1, 4, 0.5)).is_err());
    }

    #[test]
    fn linear_family_iterates_to_x() {
        // τ = y²/2 − xy: y_1 = x and all later iterates equal x.
        let mut f = TensorFamily::new(1, 1, 4);
        f.set(&[0], TruncatedSeries::variable(1, 4, 0, -1.0))
            .unwrap();
        for h in 1..5 {
            let y = fixed_point_iterate(&f, &[0.3], h).unwrap();
            assert_abs_diff_eq!(y[0], 0.3, epsilon = 1e-15);
        }
        assert_eq!(fixed_point_iterate(&f, &[0.3], 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn cubic_fixed_point_matches_closed_form() {
        // crit solves y + y²/2 = x, i.e. y = −1 + √(1+2x).
        let f = cubic_family(6);
        let x = 0.1;
        let y = fixed_point_iterate(&f, &[x], 80).unwrap();
        let exact = -1.0 + (1.0 + 2.0 * x).sqrt();
        assert_abs_diff_eq!(y[0], exact, epsilon = 1e-13);
        let g = gradient(&f, &[x], &y).unwrap();
        assert!(g[0].abs() <= 1e-9);
    }

    #[test]
    fn cubic_crit_series_matches_binomial() {
        let f = cubic_family(5);
        let cs = crit_series(&f, 5).unwrap();
        let expect = [1.0, -0.5, 0.5, -0.625, 0.875];
        for (pow, &c) in expect.iter().enumerate() {
            let got = cs.coords[0].coefficient(&MultiIndex(vec![pow as u32 + 1]));
            assert_abs_diff_eq!(got, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn only_linear_tensor_gives_minus_theta1() {
        let mut f = TensorFamily::new(2, 2, 3);
        f.set(&[0], TruncatedSeries::variable(2, 3, 0, 2.0))
            .unwrap();
        f.set(&[1], TruncatedSeries::variable(2, 3, 1, -0.5))
            .unwrap();
        let cs = crit_series(&f, 3).unwrap();
        assert_abs_diff_eq!(
            cs.coords[0].coefficient(&MultiIndex(vec![1, 0])),
            -2.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cs.coords[1].coefficient(&MultiIndex(vec![0, 1])),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(cs.coords[0].terms().count(), 1);
    }

    #[test]
    fn height_zero_is_empty_sum() {
        let f = cubic_family(4);
        assert_eq!(height_truncated_sum(&f, &[0.2], 0).unwrap(), vec![0.0]);
    }

    #[test]
    fn height_sum_equals_fixed_point_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(331);
        for _ in 0..10 {
            let f = testutil::random_tensor_family(&mut rng, 3, 4, 4);
            let x: Vec<f64> = (0..f.vars()).map(|_| 0.04).collect();
            for h in 0..=5 {
                let a = height_truncated_sum(&f, &x, h).unwrap();
                let b = fixed_point_iterate(&f, &x, h).unwrap();
                for (ai, bi) in a.iter().zip(&b) {
                    assert_abs_diff_eq!(ai, bi, epsilon = 1e-12);
                }
            }
        }
    }

    /// Per-type explicit enumeration of height-bounded trees (independent
    /// amplitude products, aut sizes) against the level-sum implementation.
    #[test]
    fn height_sum_matches_explicit_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let cases = [(1usize, 4usize), (2, 3)];
        for (m, hmax) in cases {
            let f = testutil::random_tensor_family_fixed_dim(&mut rng, m, 4, 4);
            let x: Vec<f64> = (0..f.vars()).map(|_| 0.05).collect();
            let weight = |labels: &[usize]| -> f64 {
                let mut sorted = labels.to_vec();
                sorted.sort_unstable();
                -f.theta(&sorted)
                    .map(|s| s.evaluate(&x).unwrap())
                    .unwrap_or(0.0)
            };
            for h in 1..=hmax {
                let mut explicit = vec![0.0; m];
                for (output, slot) in explicit.iter_mut().enumerate() {
                    let spec = TreeFamilySpec {
                        k: 0,
                        output,
                        leaf_labels: (0..m).collect(),
                        internal_labels: (0..m).collect(),
                        relax_root: false,
                        degenerate_constant: false,
                        max_vertex_degree: Some(f.max_tensor_degree()),
                    };
                    for tree in trees::enumerate_trees_by_height(&spec, h) {
                        *slot += trees::contraction_value(&tree, &weight) / tree.aut_size() as f64;
                    }
                }
                let level = height_truncated_sum(&f, &x, h).unwrap();
                for (e, l) in explicit.iter().zip(&level) {
                    assert_abs_diff_eq!(e, l, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn scalar_and_general_paths_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(501);
        for _ in 0..5 {
            let f = testutil::random_tensor_family(&mut rng, 3, 4, 4);
            assert!(f.monomial_weighted());
            let fast = crit_series(&f, 4).unwrap();
            let slow = crit_series_general(&f, 4).unwrap();
            for (a, b) in fast.coords.iter().zip(&slow.coords) {
                assert!(a.max_abs_diff(b) <= 1e-13, "paths disagree: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn general_path_handles_series_weights() {
        // θ_1 = x + x² (not a monomial) forces the general path; compare the
        // low orders against the closed form of y + y²/2 = x + x².
        let d = 4;
        let mut f = TensorFamily::new(1, 1, d);
        let mut lin = TruncatedSeries::variable(1, d, 0, -1.0);
        lin.add_term(MultiIndex(vec![2]), -1.0);
        f.set(&[0], lin).unwrap();
        f.set(&[0, 0, 0], TruncatedSeries::constant(1, d, 1.0))
            .unwrap();
        assert!(!f.monomial_weighted());
        let cs = crit_series(&f, d).unwrap();
        // y = −1 + √(1 + 2(x+x²)) = x + x²/2 + … ; check numerically at a
        // small point instead of expanding by hand (remainder is O(x⁵)).
        let x = 0.02;
        let series_val = cs.coords[0].evaluate(&[x]).unwrap();
        let exact = -1.0 + (1.0 + 2.0 * (x + x * x)).sqrt();
        assert!((series_val - exact).abs() <= 1e-9);
    }

    #[test]
    fn crit_series_evaluates_near_fixed_point() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let f = testutil::random_tensor_family(&mut rng, 2, 4, 5);
        let cs = crit_series(&f, 5).unwrap();
        let x: Vec<f64> = (0..f.vars()).map(|_| 0.05).collect();
        let limit = fixed_point_iterate(&f, &x, 200).unwrap();
        for (i, series) in cs.coords.iter().enumerate() {
            let v = series.evaluate(&x).unwrap();
            assert!(
                (v - limit[i]).abs() <= 1e-7,
                "coordinate {i}: series {v} vs limit {}",
                limit[i]
            );
        }
    }

    #[test]
    fn reduce_identity_is_noop() {
        let f = cubic_family(4);
        let b = vec![vec![1.0]];
        let g = reduce_pairing(&b, &f, 1e-9).unwrap();
        assert_eq!(g.theta(&[0]), f.theta(&[0]));
        assert_eq!(g.theta(&[0, 0, 0]), f.theta(&[0, 0, 0]));
    }

    #[test]
    fn reduce_diagonal_scaling() {
        // B = diag(4): coordinates scale by 1/2, a cubic θ by 1/8.
        let f = cubic_family(4);
        let b = vec![vec![4.0]];
        let g = reduce_pairing(&b, &f, 1e-9).unwrap();
        assert_abs_diff_eq!(
            g.theta(&[0]).unwrap().coefficient(&MultiIndex(vec![1])),
            -0.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            g.theta(&[0, 0, 0])
                .unwrap()
                .coefficient(&MultiIndex(vec![0])),
            0.125,
            epsilon = 1e-15
        );
    }

    #[test]
    fn reduce_rejects_indefinite() {
        let f = cubic_family(4);
        let b = vec![vec![-1.0]];
        assert!(matches!(
            reduce_pairing(&b, &f, 1e-9),
            Err(CriticalError::NotSpd(_))
        ));
    }

    #[test]
    fn divergence_detected_outside_contraction_region() {
        // Strong cubic forcing far from the origin drives the iterates out.
        let mut f = TensorFamily::new(1, 1, 4);
        f.set(&[0], TruncatedSeries::variable(1, 4, 0, -1.0))
            .unwrap();
        f.set(&[0, 0, 0], TruncatedSeries::constant(1, 4, 6.0))
            .unwrap();
        let err = fixed_point_iterate(&f, &[5.0], 200);
        assert!(matches!(err, Err(CriticalError::Diverged(_))));
    }
}
