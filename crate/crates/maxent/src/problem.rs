//! Constraint-problem ingestion, validation, and normalization.
//!
//! A problem is a finite alphabet with a strictly positive reference
//! distribution `q`, constraint rows `r_1..r_k`, and an optional target row
//! `s`. Normalization centers the constraints (`E_Q r_i = 0`) and makes them
//! covariance-orthonormal (`E_Q r_i r_j = δ_ij`) by Gram–Schmidt in the fixed
//! row order; the accompanying affine transform maps raw constraint values
//! into normalized coordinates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ q_σ = 1`.
pub const Q_SUM_TOL: f64 = 1e-12;
/// Default pivot tolerance for rank / covariance-singularity checks.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("alphabet must have at least 2 symbols (got {0})")]
    AlphabetTooSmall(usize),
    #[error("at least one constraint row is required")]
    NoConstraints,
    #[error("zero or negative reference weight at symbol '{0}'")]
    ZeroWeight(String),
    #[error("reference weights sum to {0}, not 1")]
    BadWeightSum(f64),
    #[error("row '{kind}' has length {got}, expected {expected}")]
    RowLength {
        kind: String,
        got: usize,
        expected: usize,
    },
    #[error("constraints rank-deficient (row {0} is dependent)")]
    RankDeficient(usize),
    #[error("covariance Gram matrix numerically singular at row {0} (pivot {1:.3e})")]
    CovarianceSingular(usize, f64),
    #[error("inconsistent observable value for repeated symbol '{0}'")]
    InconsistentObservable(String),
    #[error("sample support has a single symbol; need at least 2")]
    SingleSymbolSupport,
    #[error("expected {expected} values for symbol '{symbol}', got {got}")]
    BadRecord {
        symbol: String,
        expected: usize,
        got: usize,
    },
}

/// A constraint problem: alphabet, reference weights, constraint rows, and an
/// optional target row.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Problem {
    pub alphabet: Vec<String>,
    pub q: Vec<f64>,
    pub r: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<f64>>,
}

impl Problem {
    /// Alphabet size.
    pub fn n(&self) -> usize {
        self.alphabet.len()
    }

    /// Number of constraint rows.
    pub fn k(&self) -> usize {
        self.r.len()
    }

    /// `E_Q f = Σ_σ q_σ f(σ)`.
    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.q.iter().zip(f).map(|(&q, &v)| q * v).sum()
    }

    /// Covariance pairing `Σ_σ q_σ f(σ) g(σ)` (no centering).
    pub fn pairing(&self, f: &[f64], g: &[f64]) -> f64 {
        self.q
            .iter()
            .zip(f)
            .zip(g)
            .map(|((&q, &a), &b)| q * a * b)
            .sum()
    }

    /// Checks all structural invariants; called by every loader.
    pub fn validate(&self, rank_tol: f64, drop_dependent: bool) -> Result<Problem, ProblemError> {
        let n = self.n();
        if n < 2 {
            return Err(ProblemError::AlphabetTooSmall(n));
        }
        if self.r.is_empty() {
            return Err(ProblemError::NoConstraints);
        }
        if self.q.len() != n {
            return Err(ProblemError::RowLength {
                kind: "q".into(),
                got: self.q.len(),
                expected: n,
            });
        }
        for (sym, &q) in self.alphabet.iter().zip(&self.q) {
            if q <= 0.0 {
                return Err(ProblemError::ZeroWeight(sym.clone()));
            }
        }
        let sum: f64 = self.q.iter().sum();
        if (sum - 1.0).abs() > Q_SUM_TOL {
            return Err(ProblemError::BadWeightSum(sum));
        }
        for (i, row) in self.r.iter().enumerate() {
            if row.len() != n {
                return Err(ProblemError::RowLength {
                    kind: format!("r[{i}]"),
                    got: row.len(),
                    expected: n,
                });
            }
        }
        if let Some(s) = &self.s {
            if s.len() != n {
                return Err(ProblemError::RowLength {
                    kind: "s".into(),
                    got: s.len(),
                    expected: n,
                });
            }
        }

        // Plain linear independence of the constraint rows, by Gram-Schmidt
        // with the Euclidean inner product.
        let mut kept: Vec<usize> = Vec::new();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (i, row) in self.r.iter().enumerate() {
            let mut v = row.clone();
            for b in &basis {
                let c: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
                for (vj, bj) in v.iter_mut().zip(b) {
                    *vj -= c * bj;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1.0);
            if norm <= rank_tol * scale {
                if drop_dependent {
                    continue;
                }
                return Err(ProblemError::RankDeficient(i));
            }
            for vj in v.iter_mut() {
                *vj /= norm;
            }
            basis.push(v);
            kept.push(i);
        }
        if kept.is_empty() {
            return Err(ProblemError::NoConstraints);
        }
        if kept.len() == self.r.len() {
            Ok(self.clone())
        } else {
            Ok(Problem {
                alphabet: self.alphabet.clone(),
                q: self.q.clone(),
                r: kept.iter().map(|&i| self.r[i].clone()).collect(),
                s: self.s.clone(),
            })
        }
    }
}

/// Affine change of constraint coordinates: `ρ'' = A·(ρ − b)`.
///
/// `b_i = E_Q r_i` and the rows of `A` express the orthonormalized rows in
/// terms of the centered originals. `A` is square (k×k, invertible,
/// lower-triangular) when no dependent rows were dropped; with drops it is
/// k'×k.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AffineTransform {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl AffineTransform {
    pub fn identity(k: usize) -> Self {
        AffineTransform {
            a: (0..k)
                .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            b: vec![0.0; k],
        }
    }

    /// Maps raw constraint values to normalized coordinates.
    pub fn apply(&self, rho_raw: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .map(|row| {
                row.iter()
                    .zip(rho_raw.iter().zip(&self.b))
                    .map(|(&a, (&rho, &b))| a * (rho - b))
                    .sum()
            })
            .collect()
    }
}

/// Maps raw constraint values `ρ` through the transform: `A·(ρ − b)`.
pub fn map_constraints(t: &AffineTransform, rho_raw: &[f64]) -> Vec<f64> {
    t.apply(rho_raw)
}

/// A problem whose constraints satisfy `E_Q r_i = 0` and
/// `E_Q r_i r_j = δ_ij`, with a provenance link to the raw problem.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormalizedProblem {
    pub problem: Problem,
    pub raw: Problem,
}

impl NormalizedProblem {
    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn k(&self) -> usize {
        self.problem.k()
    }

    pub fn q(&self) -> &[f64] {
        &self.problem.q
    }

    pub fn r(&self) -> &[Vec<f64>] {
        &self.problem.r
    }

    pub fn s(&self) -> Option<&Vec<f64>> {
        self.problem.s.as_ref()
    }
}

/// Loads and validates a problem from its JSON document form.
pub fn load_problem(text: &str, drop_dependent: bool) -> Result<Problem, ProblemError> {
    let raw: Problem =
        serde_json::from_str(text).map_err(|e| ProblemError::Parse(e.to_string()))?;
    raw.validate(DEFAULT_RANK_TOL, drop_dependent)
}

/// Builds a problem from delimited sample records `symbol,v1,…,vk[,s]`.
///
/// `q` becomes the empirical symbol frequencies; observable values must be
/// consistent across repeated symbols. When `with_target` is set the last
/// column is read as the target row.
pub fn load_samples(text: &str, with_target: bool) -> Result<Problem, ProblemError> {
    let mut alphabet: Vec<String> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(ProblemError::Parse(format!(
                "line {}: expected 'symbol,v1,…'",
                lineno + 1
            )));
        }
        let symbol = fields[0].to_string();
        let vals: Vec<f64> = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    ProblemError::Parse(format!("line {}: bad number '{f}'", lineno + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        match width {
            None => width = Some(vals.len()),
            Some(w) if w != vals.len() => {
                return Err(ProblemError::BadRecord {
                    symbol,
                    expected: w,
                    got: vals.len(),
                })
            }
            _ => {}
        }
        match alphabet.iter().position(|s| *s == symbol) {
            Some(idx) => {
                if values[idx] != vals {
                    return Err(ProblemError::InconsistentObservable(symbol));
                }
                counts[idx] += 1;
            }
            None => {
                alphabet.push(symbol);
                counts.push(1);
                values.push(vals);
            }
        }
    }

    if alphabet.len() < 2 {
        return Err(ProblemError::SingleSymbolSupport);
    }
    let width = width.unwrap();
    let k = if with_target {
        if width < 2 {
            return Err(ProblemError::Parse(
                "need at least one constraint column besides the target".into(),
            ));
        }
        width - 1
    } else {
        width
    };

    let total: u64 = counts.iter().sum();
    let q: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    let r: Vec<Vec<f64>> = (0..k)
        .map(|i| values.iter().map(|v| v[i]).collect())
        .collect();
    let s = with_target.then(|| values.iter().map(|v| v[width - 1]).collect());

    let problem = Problem { alphabet, q, r, s };
    problem.validate(DEFAULT_RANK_TOL, false)
}

/// Centers and covariance-orthonormalizes the constraint rows.
///
/// Gram–Schmidt runs in the given row order with the pairing
/// `Cov(f,g) = Σ_σ q_σ f(σ) g(σ)` on centered rows, normalizing each row
/// after orthogonalization. Deterministic: identical inputs give
/// bit-identical transforms. The target row is passed through untouched.
pub fn normalize(
    p: &Problem,
    tol: f64,
) -> Result<(NormalizedProblem, AffineTransform), ProblemError> {
    normalize_with(p, tol, false)
}

/// Like [`normalize`], but when `drop_dependent` is set, rows whose centered
/// component is numerically dependent are dropped instead of failing.
pub fn normalize_with(
    p: &Problem,
    tol: f64,
    drop_dependent: bool,
) -> Result<(NormalizedProblem, AffineTransform), ProblemError> {
    let n = p.n();
    let k = p.k();
    let b: Vec<f64> = p.r.iter().map(|row| p.expectation(row)).collect();
    let centered: Vec<Vec<f64>> =
        p.r.iter()
            .zip(&b)
            .map(|(row, &m)| row.iter().map(|&v| v - m).collect())
            .collect();

    // Orthonormal rows u_i and their expressions a_i over the centered
    // originals: u_i = Σ_j a[i][j]·centered[j].
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for i in 0..k {
        let mut v = centered[i].clone();
        let mut a = vec![0.0; k];
        a[i] = 1.0;
        for (u, au) in rows.iter().zip(&coeffs) {
            let c = p.pairing(&centered[i], u);
            for (vj, uj) in v.iter_mut().zip(u) {
                *vj -= c * uj;
            }
            for (aj, auj) in a.iter_mut().zip(au) {
                *aj -= c * auj;
            }
        }
        let norm2 = p.pairing(&v, &v);
        if norm2 <= tol * tol {
            if drop_dependent {
                continue;
            }
            return Err(ProblemError::CovarianceSingular(i, norm2.max(0.0).sqrt()));
        }
        let norm = norm2.sqrt();
        for vj in v.iter_mut() {
            *vj /= norm;
        }
        for aj in a.iter_mut() {
            *aj /= norm;
        }
        rows.push(v);
        coeffs.push(a);
        kept.push(i);
    }

    let _ = n;
    let transform = AffineTransform { a: coeffs, b };
    let normalized = Problem {
        alphabet: p.alphabet.clone(),
        q: p.q.clone(),
        r: rows,
        s: p.s.clone(),
    };
    Ok((
        NormalizedProblem {
            problem: normalized,
            raw: p.clone(),
        },
        transform,
    ))
}
