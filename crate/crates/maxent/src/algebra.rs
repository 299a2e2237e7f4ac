//! Multi-indices, degree-truncated multivariate power series, and symmetric
//! coefficient tables.
//!
//! Series coefficients are `f64`; all arithmetic closes over a fixed variable
//! count and a fixed maximum total degree. Keys are kept in graded
//! lexicographic order so that serialization and evaluation are deterministic.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AlgebraError {
    #[error("series dimension mismatch: {0} vs {1} variables")]
    VariableMismatch(usize, usize),
    #[error("series degree mismatch: {0} vs {1}")]
    DegreeMismatch(usize, usize),
    #[error("arity mismatch: tensor degree {expected}, {got} arguments")]
    ArityMismatch { expected: usize, got: usize },
    #[error("label {0} out of range (dimension {1})")]
    LabelOutOfRange(usize, usize),
}

/// Exponent vector `(a_1, …, a_k)` of a monomial `x^a`.
///
/// Ordered graded-lexicographically: first by total degree, then
/// lexicographically on the exponents.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(k: usize) -> Self {
        MultiIndex(vec![0; k])
    }

    /// Unit index `e_i` (exponent 1 on variable `i`).
    pub fn unit(k: usize, i: usize) -> Self {
        let mut v = vec![0; k];
        v[i] = 1;
        MultiIndex(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total degree `|I| = Σ a_i`.
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.len(), other.len());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Monomial value `∏ x_i^{a_i}`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&a, &xi)| xi.powi(a as i32))
            .product()
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Multivariate power series in `vars` variables, truncated at total degree
/// `max_degree`. Absent keys are zero; keys never exceed the truncation
/// degree.
#[derive(Clone, PartialEq)]
pub struct TruncatedSeries {
    vars: usize,
    max_degree: u32,
    coeffs: BTreeMap<MultiIndex, f64>,
}

impl TruncatedSeries {
    pub fn zero(vars: usize, max_degree: u32) -> Self {
        TruncatedSeries {
            vars,
            max_degree,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn constant(vars: usize, max_degree: u32, value: f64) -> Self {
        let mut s = Self::zero(vars, max_degree);
        s.add_term(MultiIndex::zero(vars), value);
        s
    }

    pub fn monomial(vars: usize, max_degree: u32, index: MultiIndex, value: f64) -> Self {
        let mut s = Self::zero(vars, max_degree);
        s.add_term(index, value);
        s
    }

    /// The series `c·x_i`.
    pub fn variable(vars: usize, max_degree: u32, i: usize, c: f64) -> Self {
        Self::monomial(vars, max_degree, MultiIndex::unit(vars, i), c)
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn coefficient(&self, index: &MultiIndex) -> f64 {
        self.coeffs.get(index).copied().unwrap_or(0.0)
    }

    /// Graded-lex iteration over stored terms.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.coeffs.iter().map(|(i, &c)| (i, c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|&c| c == 0.0)
    }

    /// Adds `value` to the coefficient at `index`, dropping terms beyond the
    /// truncation degree.
    pub fn add_term(&mut self, index: MultiIndex, value: f64) {
        debug_assert_eq!(index.len(), self.vars);
        if index.degree() > self.max_degree || value == 0.0 {
            return;
        }
        *self.coeffs.entry(index).or_insert(0.0) += value;
    }

    fn check_compatible(&self, other: &TruncatedSeries) -> Result<(), AlgebraError> {
        if self.vars != other.vars {
            return Err(AlgebraError::VariableMismatch(self.vars, other.vars));
        }
        if self.max_degree != other.max_degree {
            return Err(AlgebraError::DegreeMismatch(
                self.max_degree as usize,
                other.max_degree as usize,
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &TruncatedSeries) -> Result<TruncatedSeries, AlgebraError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        for (i, c) in other.terms() {
            out.add_term(i.clone(), c);
        }
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> TruncatedSeries {
        let mut out = Self::zero(self.vars, self.max_degree);
        for (i, v) in self.terms() {
            out.add_term(i.clone(), v * c);
        }
        out
    }

    /// Cauchy product truncated at the shared maximum degree.
    pub fn mul(&self, other: &TruncatedSeries) -> Result<TruncatedSeries, AlgebraError> {
        self.check_compatible(other)?;
        let mut out = Self::zero(self.vars, self.max_degree);
        for (ia, ca) in self.terms() {
            if ia.degree() > self.max_degree {
                continue;
            }
            for (ib, cb) in other.terms() {
                if ia.degree() + ib.degree() > self.max_degree {
                    // other's terms are graded-sorted, all later ones are larger
                    break;
                }
                out.add_term(ia.add(ib), ca * cb);
            }
        }
        Ok(out)
    }

    /// Evaluates the series at a point, summing terms in graded-lex order.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64, AlgebraError> {
        if x.len() != self.vars {
            return Err(AlgebraError::VariableMismatch(self.vars, x.len()));
        }
        Ok(self.terms().map(|(i, c)| c * i.eval(x)).sum())
    }

    /// Drops coefficients with magnitude at or below `tol` (used to keep
    /// structural comparisons meaningful after cancellation).
    pub fn prune(&mut self, tol: f64) {
        self.coeffs.retain(|_, c| c.abs() > tol);
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    /// Largest absolute coefficient difference, comparing the union of keys.
    pub fn max_abs_diff(&self, other: &TruncatedSeries) -> f64 {
        let mut m = 0.0f64;
        for (i, c) in self.terms() {
            m = m.max((c - other.coefficient(i)).abs());
        }
        for (i, c) in other.terms() {
            m = m.max((c - self.coefficient(i)).abs());
        }
        m
    }
}

impl fmt::Debug for TruncatedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            write!(f, "{c}·x^{:?}", i.0)?;
            first = false;
        }
        if first {
            write!(f, "0")?;
        }
        Ok(())
    }
}

/// Coefficients of a symmetric degree-`l` tensor over `dim` labels.
///
/// Only sorted label tuples are stored; symmetry is structural.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricCoefficients<T> {
    dim: usize,
    degree: usize,
    entries: BTreeMap<Vec<usize>, T>,
}

impl<T: Clone> SymmetricCoefficients<T> {
    pub fn new(dim: usize, degree: usize) -> Self {
        SymmetricCoefficients {
            dim,
            degree,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn set(&mut self, labels: &[usize], value: T) -> Result<(), AlgebraError> {
        if labels.len() != self.degree {
            return Err(AlgebraError::ArityMismatch {
                expected: self.degree,
                got: labels.len(),
            });
        }
        for &l in labels {
            if l >= self.dim {
                return Err(AlgebraError::LabelOutOfRange(l, self.dim));
            }
        }
        let mut key = labels.to_vec();
        key.sort_unstable();
        self.entries.insert(key, value);
        Ok(())
    }

    pub fn get(&self, labels: &[usize]) -> Option<&T> {
        let mut key = labels.to_vec();
        key.sort_unstable();
        self.entries.get(&key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<usize>, &T)> {
        self.entries.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn map<U: Clone>(&self, f: impl Fn(&T) -> U) -> SymmetricCoefficients<U> {
        SymmetricCoefficients {
            dim: self.dim,
            degree: self.degree,
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), f(v)))
                .collect(),
        }
    }
}

/// Total order on series used to canonicalize product association: compares
/// the term lists entrywise, with coefficient ties broken by the bit pattern.
fn series_total_order(a: &TruncatedSeries, b: &TruncatedSeries) -> Ordering {
    let mut ia = a.terms();
    let mut ib = b.terms();
    loop {
        match (ia.next(), ib.next()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some((ka, ca)), Some((kb, cb))) => {
                let ord = ka.cmp(kb).then_with(|| ca.to_bits().cmp(&cb.to_bits()));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
        }
    }
}

/// Contracts a symmetric tensor against `l` vector-of-series arguments:
/// `Σ_{i_1,…,i_l} θ_{i_1…i_l} · ∏_j args[j][i_j]`, truncated.
///
/// Each slot `args[j]` supplies one series per label (length = tensor
/// dimension). The result is bit-identical under any permutation of the
/// slots: per-term factor products are associated in a canonical order and
/// per-coefficient accumulation is sorted before summing. When all slots are
/// the same vector (the usual case for star composition), the ordering sum
/// collapses to a multinomial weight.
pub fn apply_multilinear(
    theta: &SymmetricCoefficients<f64>,
    args: &[&[TruncatedSeries]],
) -> Result<TruncatedSeries, AlgebraError> {
    if args.len() != theta.degree() || theta.degree() == 0 {
        return Err(AlgebraError::ArityMismatch {
            expected: theta.degree(),
            got: args.len(),
        });
    }
    for slot in args {
        if slot.len() != theta.dim() {
            return Err(AlgebraError::VariableMismatch(theta.dim(), slot.len()));
        }
    }
    let vars = args[0][0].vars();
    let max_degree = args[0][0].max_degree();
    for slot in args {
        for s in slot.iter() {
            args[0][0].check_compatible(s)?;
        }
    }

    let identical_slots = args.windows(2).all(|w| w[0] == w[1]);

    // Terms accumulated per key, then summed in sorted bit order so the
    // result does not depend on tuple enumeration order.
    let mut buckets: BTreeMap<MultiIndex, Vec<f64>> = BTreeMap::new();
    let push_product = |factors: &mut Vec<&TruncatedSeries>,
                        weight: f64,
                        buckets: &mut BTreeMap<MultiIndex, Vec<f64>>|
     -> Result<(), AlgebraError> {
        factors.sort_by(|a, b| series_total_order(a, b));
        let mut product = TruncatedSeries::constant(vars, max_degree, 1.0);
        for f in factors.iter() {
            product = product.mul(f)?;
        }
        for (i, c) in product.terms() {
            buckets.entry(i.clone()).or_default().push(weight * c);
        }
        Ok(())
    };

    for (key, &coeff) in theta.entries() {
        if coeff == 0.0 {
            continue;
        }
        if identical_slots {
            let weight = coeff * distinct_ordering_count(key) as f64;
            let mut factors: Vec<&TruncatedSeries> =
                key.iter().map(|&label| &args[0][label]).collect();
            push_product(&mut factors, weight, &mut buckets)?;
        } else {
            for assignment in distinct_orderings(key) {
                let mut factors: Vec<&TruncatedSeries> = assignment
                    .iter()
                    .enumerate()
                    .map(|(slot, &label)| &args[slot][label])
                    .collect();
                push_product(&mut factors, coeff, &mut buckets)?;
            }
        }
    }

    let mut out = TruncatedSeries::zero(vars, max_degree);
    for (i, mut vals) in buckets {
        vals.sort_by_key(|a| a.to_bits());
        let total: f64 = vals.iter().sum();
        out.add_term(i, total);
    }
    Ok(out)
}

/// `l! / ∏ mult!` for a sorted multiset of size `l`.
pub fn distinct_ordering_count(sorted: &[usize]) -> u64 {
    let mut count = factorial(sorted.len() as u64);
    let mut run = 1u64;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            count /= factorial(run);
            run = 1;
        }
    }
    count / factorial(run)
}

pub fn factorial(n: u64) -> u64 {
    (1..=n).product()
}

/// Distinct orderings (as label sequences) of a sorted label multiset.
fn distinct_orderings(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = sorted.to_vec();
    loop {
        out.push(current.clone());
        if !next_permutation(&mut current) {
            break;
        }
    }
    out
}

fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let mut i = v.len() - 1;
    while i > 0 && v[i - 1] >= v[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = v.len() - 1;
    while v[j] <= v[i - 1] {
        j -= 1;
    }
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}
