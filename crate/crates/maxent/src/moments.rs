//! Joint moments and joint cumulants of the constraint observables.
//!
//! Labels index the observables: `0` is the constant function 1, `1..=k` the
//! constraint rows, `k+1` the target row when present. Tables are built once
//! for all sorted label multisets up to a maximum size and are read-only
//! afterwards, so lookups are cheap and concurrent reads are safe.
//!
//! Cumulants are computed from moments by the set-partition Möbius sum
//! `κ(X_1..X_n) = Σ_π (−1)^{|π|−1} (|π|−1)! ∏_{B∈π} E[∏_{j∈B} X_j]`,
//! with partitions enumerated as restricted-growth strings.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::problem::Problem;

#[derive(Debug, Error, PartialEq)]
pub enum MomentsError {
    #[error("label {label} out of range (k = {k}, target {})", if *.has_target { "present" } else { "absent" })]
    LabelOutOfRange {
        label: usize,
        k: usize,
        has_target: bool,
    },
    #[error("cumulant of an empty multiset is undefined")]
    EmptyMultiset,
    #[error("multiset size {got} exceeds table degree {max}")]
    DegreeExceeded { got: usize, max: usize },
}

/// Common lookup interface for moment and cumulant tables, as used by tree
/// amplitudes.
pub trait CouplingSource {
    /// Joint moment / cumulant of the label multiset (any order).
    fn coupling(&self, labels: &[usize]) -> Result<f64, MomentsError>;
    fn k(&self) -> usize;
    fn has_target(&self) -> bool;
}

fn observable_row(p: &Problem, label: usize) -> Option<Vec<f64>> {
    let k = p.k();
    if label == 0 {
        Some(vec![1.0; p.n()])
    } else if label <= k {
        Some(p.r[label - 1].clone())
    } else if label == k + 1 {
        p.s.clone()
    } else {
        None
    }
}

/// Directly computes `E_Q[∏_j r_{labels_j}]` (no memoization).
pub fn joint_moment(p: &Problem, labels: &[usize]) -> Result<f64, MomentsError> {
    let k = p.k();
    let has_target = p.s.is_some();
    let mut prod = vec![1.0; p.n()];
    for &label in labels {
        let row = observable_row(p, label).ok_or(MomentsError::LabelOutOfRange {
            label,
            k,
            has_target,
        })?;
        for (acc, v) in prod.iter_mut().zip(&row) {
            *acc *= v;
        }
    }
    Ok(p.expectation(&prod))
}

/// Memoized joint moments `E_Q[∏ r]` for all label multisets up to a size.
#[derive(Clone, Debug)]
pub struct MomentTable {
    k: usize,
    has_target: bool,
    max_size: usize,
    entries: BTreeMap<Vec<usize>, f64>,
}

impl MomentTable {
    /// Builds entries for every sorted multiset over the valid labels with
    /// size ≤ `max_size`.
    pub fn build(p: &Problem, max_size: usize) -> Self {
        let k = p.k();
        let has_target = p.s.is_some();
        let max_label = if has_target { k + 1 } else { k };
        let mut entries = BTreeMap::new();
        let mut stack: Vec<usize> = Vec::new();
        build_multisets(0, max_label, max_size, &mut stack, &mut |labels| {
            let v = joint_moment(p, labels).expect("labels in range by construction");
            entries.insert(labels.to_vec(), v);
        });
        MomentTable {
            k,
            has_target,
            max_size,
            entries,
        }
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Looks up `E_Q[∏ r_{labels}]`; labels may be given in any order.
    pub fn joint_moment(&self, labels: &[usize]) -> Result<f64, MomentsError> {
        let mut key = labels.to_vec();
        key.sort_unstable();
        if let Some(&last) = key.last() {
            let max_label = if self.has_target { self.k + 1 } else { self.k };
            if last > max_label {
                return Err(MomentsError::LabelOutOfRange {
                    label: last,
                    k: self.k,
                    has_target: self.has_target,
                });
            }
        }
        if key.len() > self.max_size {
            return Err(MomentsError::DegreeExceeded {
                got: key.len(),
                max: self.max_size,
            });
        }
        Ok(*self.entries.get(&key).expect("built for all sizes ≤ max"))
    }
}

impl CouplingSource for MomentTable {
    fn coupling(&self, labels: &[usize]) -> Result<f64, MomentsError> {
        self.joint_moment(labels)
    }

    fn k(&self) -> usize {
        self.k
    }

    fn has_target(&self) -> bool {
        self.has_target
    }
}

/// Memoized joint cumulants for label multisets over `1..=k(+1)`.
#[derive(Clone, Debug)]
pub struct CumulantTable {
    k: usize,
    has_target: bool,
    max_size: usize,
    entries: BTreeMap<Vec<usize>, f64>,
}

impl CumulantTable {
    pub fn build(p: &Problem, max_size: usize) -> Self {
        let k = p.k();
        let has_target = p.s.is_some();
        let moments = MomentTable::build(p, max_size);
        let max_label = if has_target { k + 1 } else { k };
        let mut entries = BTreeMap::new();
        let mut stack: Vec<usize> = Vec::new();
        build_multisets(1, max_label, max_size, &mut stack, &mut |labels| {
            if labels.is_empty() {
                return;
            }
            let v = cumulant_from_moments(labels, &|block| {
                moments.joint_moment(block).expect("within table degree")
            });
            entries.insert(labels.to_vec(), v);
        });
        CumulantTable {
            k,
            has_target,
            max_size,
            entries,
        }
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Looks up `κ(r_{labels})`; labels may be given in any order.
    pub fn joint_cumulant(&self, labels: &[usize]) -> Result<f64, MomentsError> {
        if labels.is_empty() {
            return Err(MomentsError::EmptyMultiset);
        }
        let mut key = labels.to_vec();
        key.sort_unstable();
        let max_label = if self.has_target { self.k + 1 } else { self.k };
        if key[0] == 0 || key[key.len() - 1] > max_label {
            let bad = if key[0] == 0 { 0 } else { key[key.len() - 1] };
            return Err(MomentsError::LabelOutOfRange {
                label: bad,
                k: self.k,
                has_target: self.has_target,
            });
        }
        if key.len() > self.max_size {
            return Err(MomentsError::DegreeExceeded {
                got: key.len(),
                max: self.max_size,
            });
        }
        Ok(*self.entries.get(&key).expect("built for all sizes ≤ max"))
    }
}

impl CouplingSource for CumulantTable {
    fn coupling(&self, labels: &[usize]) -> Result<f64, MomentsError> {
        self.joint_cumulant(labels)
    }

    fn k(&self) -> usize {
        self.k
    }

    fn has_target(&self) -> bool {
        self.has_target
    }
}

/// `κ` of a label multiset via the partition Möbius sum, with `moment`
/// supplying `E[∏]` per block.
pub fn cumulant_from_moments(labels: &[usize], moment: &dyn Fn(&[usize]) -> f64) -> f64 {
    let mut total = 0.0;
    for_each_partition(labels.len(), &mut |assignment, block_count| {
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); block_count];
        for (i, &b) in assignment.iter().enumerate() {
            blocks[b].push(labels[i]);
        }
        let sign = if (block_count - 1) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        let weight = sign * crate::algebra::factorial(block_count as u64 - 1) as f64;
        let prod: f64 = blocks.iter().map(|b| moment(b)).product();
        total += weight * prod;
    });
    total
}

/// Inverse direction: `E[∏] = Σ_π ∏_B κ(B)`. Used to round-trip tables.
pub fn moment_from_cumulants(labels: &[usize], cumulant: &dyn Fn(&[usize]) -> f64) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    let mut total = 0.0;
    for_each_partition(labels.len(), &mut |assignment, block_count| {
        let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); block_count];
        for (i, &b) in assignment.iter().enumerate() {
            blocks[b].push(labels[i]);
        }
        let prod: f64 = blocks.iter().map(|b| cumulant(b)).product();
        total += prod;
    });
    total
}

/// Enumerates set partitions of `{0..n}` as restricted-growth strings,
/// calling `f(assignment, block_count)` for each.
fn for_each_partition(n: usize, f: &mut dyn FnMut(&[usize], usize)) {
    if n == 0 {
        return;
    }
    let mut a = vec![0usize; n];
    recurse(1, 1, &mut a, f);

    fn recurse(
        pos: usize,
        max_used: usize,
        a: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize], usize),
    ) {
        if pos == a.len() {
            f(a, max_used);
            return;
        }
        for b in 0..=max_used {
            a[pos] = b;
            recurse(pos + 1, max_used.max(b + 1), a, f);
        }
    }
}

fn build_multisets(
    min_label: usize,
    max_label: usize,
    remaining: usize,
    stack: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    f(stack);
    if remaining == 0 {
        return;
    }
    let start = stack.last().copied().unwrap_or(min_label).max(min_label);
    for label in start..=max_label {
        stack.push(label);
        build_multisets(min_label, max_label, remaining - 1, stack, f);
        stack.pop();
    }
}
