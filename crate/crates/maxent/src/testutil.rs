//! Seeded generators for randomized tests and verification runs.

use rand::Rng;

use crate::algebra::TruncatedSeries;
use crate::critical::TensorFamily;
use crate::problem::{normalize, NormalizedProblem, Problem, DEFAULT_RANK_TOL};

/// Draws a problem with `2..=max_n` symbols and `1..=max_k` constraint rows
/// (bounded by `n − 1` so normalization cannot run out of directions).
/// Reference weights are bounded away from zero; constraint entries lie in
/// `[-1, 1]`. Rows are redrawn if Gram–Schmidt finds them nearly dependent.
pub fn random_problem<R: Rng>(
    rng: &mut R,
    max_n: usize,
    max_k: usize,
    with_target: bool,
) -> Problem {
    loop {
        let n = rng.random_range(2..=max_n.max(2));
        let k = rng.random_range(1..=max_k.min(n - 1).max(1));
        let mut q: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = q.iter().sum();
        for x in q.iter_mut() {
            *x /= total;
        }
        let r: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let s = with_target.then(|| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
        let p = Problem {
            alphabet: (0..n).map(|i| format!("s{i}")).collect(),
            q,
            r,
            s,
        };
        if p.validate(1e-3, false).is_ok() && normalize(&p, 1e-3).is_ok() {
            return p;
        }
    }
}

/// A random problem, already normalized.
pub fn random_normalized<R: Rng>(
    rng: &mut R,
    max_n: usize,
    max_k: usize,
    with_target: bool,
) -> NormalizedProblem {
    let p = random_problem(rng, max_n, max_k, with_target);
    normalize(&p, DEFAULT_RANK_TOL).unwrap().0
}

/// The two-symbol uniform problem with `r = (1, −1)` and `s = (1, 0)`.
pub fn binary_rademacher() -> Problem {
    Problem {
        alphabet: vec!["a".into(), "b".into()],
        q: vec![0.5, 0.5],
        r: vec![vec![1.0, -1.0]],
        s: Some(vec![1.0, 0.0]),
    }
}

/// Random polynomial tensor family with dimension `1..=max_dim`, tensors up
/// to `max_tensor_degree`, `T_2 = 0`, and monomial linear coefficients.
pub fn random_tensor_family<R: Rng>(
    rng: &mut R,
    max_dim: usize,
    max_tensor_degree: usize,
    d: u32,
) -> TensorFamily {
    let m = rng.random_range(1..=max_dim);
    random_tensor_family_fixed_dim(rng, m, max_tensor_degree, d)
}

/// As [`random_tensor_family`] with a fixed dimension.
pub fn random_tensor_family_fixed_dim<R: Rng>(
    rng: &mut R,
    m: usize,
    max_tensor_degree: usize,
    d: u32,
) -> TensorFamily {
    let mut family = TensorFamily::new(m, m, d);
    for i in 0..m {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let c = sign * rng.random_range(0.2..0.8);
        family
            .set(&[i], TruncatedSeries::variable(m, d, i, c))
            .unwrap();
    }
    for degree in 3..=max_tensor_degree {
        for labels in sorted_label_multisets(m, degree) {
            if rng.random_bool(0.75) {
                let c = rng.random_range(-0.6..0.6);
                family
                    .set(&labels, TruncatedSeries::constant(m, d, c))
                    .unwrap();
            }
        }
    }
    family
}

fn sorted_label_multisets(m: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    fn go(
        m: usize,
        remaining: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if remaining == 0 {
            out.push(cur.clone());
            return;
        }
        for l in start..m {
            cur.push(l);
            go(m, remaining - 1, l, cur, out);
            cur.pop();
        }
    }
    go(m, size, 0, &mut Vec::new(), &mut out);
    out
}
