//! Direct numerical ground truth: solve the divergence minimization by
//! damped Newton on the dual, and verify series predictions against it.
//!
//! The dual objective in the exponential parameters is
//! `F(λ) = log Σ_σ q_σ exp(−Σ λ_i r_i(σ)) + Σ λ_i ρ_i`, smooth and convex
//! with gradient `ρ − E_P̃ r` and Hessian `Cov_P̃(r)`. Its minimizer gives the
//! constrained minimizer `p_σ = q_σ exp(−λ'_0 − Σ λ_i r_i(σ))`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expansion::{evaluate, CoefficientTable, ExpansionError};
use crate::problem::NormalizedProblem;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}); the constraint values may be infeasible")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("numerical overflow in the exponential family (extreme parameters)")]
    Overflow,
    #[error("constraint vector has length {got}, expected {expected}")]
    Dimension { got: usize, expected: usize },
    #[error("oracle failed at {failed} of {total} sample points")]
    TooManyFailures { failed: usize, total: usize },
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
}

/// Solution of one divergence minimization.
#[derive(Clone, Debug, Serialize)]
pub struct ExactSolution {
    /// Exponential parameters λ_1..λ_k.
    pub lambda: Vec<f64>,
    /// λ_0 from the stationarity form `p = q·exp(−1 − λ_0 − Σ λ r)`.
    pub lambda0: f64,
    /// λ'_0 = λ_0 + 1 = log Σ q exp(−Σ λ r).
    pub lambda0_prime: f64,
    /// The minimizing distribution.
    pub p: Vec<f64>,
    /// Target expectation E_P s, when a target row is present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Achieved divergence D(P‖Q).
    pub kl: f64,
    pub iterations: usize,
    /// Final gradient norm.
    pub residual: f64,
    /// Dual objective after each accepted step (decreasing).
    #[serde(skip_serializing)]
    pub objective_path: Vec<f64>,
}

const MAX_ITERATIONS: usize = 200;
const ARMIJO_SLOPE: f64 = 1e-4;
const BACKTRACK_FACTOR: f64 = 0.5;

/// `log Σ_σ q_σ exp(−Σ λ_i r_i(σ))` with max-subtraction, plus the tilted
/// distribution.
fn log_partition(np: &NormalizedProblem, lambda: &[f64]) -> (f64, Vec<f64>) {
    let n = np.n();
    let mut exponents = vec![0.0; n];
    for (i, row) in np.r().iter().enumerate() {
        for (e, v) in exponents.iter_mut().zip(row) {
            *e -= lambda[i] * v;
        }
    }
    let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = np
        .q()
        .iter()
        .zip(&exponents)
        .map(|(&q, &e)| q * (e - max).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= z;
    }
    (z.ln() + max, weights)
}

/// Minimizes the dual objective by Newton steps with Armijo backtracking,
/// starting from λ = 0, until the gradient norm drops below `tol`.
pub fn solve_exact(
    np: &NormalizedProblem,
    rho: &[f64],
    tol: f64,
) -> Result<ExactSolution, OracleError> {
    let k = np.k();
    if rho.len() != k {
        return Err(OracleError::Dimension {
            got: rho.len(),
            expected: k,
        });
    }
    let mut lambda = vec![0.0; k];
    let (mut log_z, mut p) = log_partition(np, &lambda);
    let mut objective = log_z; // + λ·ρ = 0 at start
    let mut path = vec![objective];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    for iter in 1..=MAX_ITERATIONS {
        iterations = iter;
        // gradient ρ − E_P̃ r and Hessian Cov_P̃(r)
        let means: Vec<f64> = np
            .r()
            .iter()
            .map(|row| p.iter().zip(row).map(|(&w, &v)| w * v).sum())
            .collect();
        let grad: Vec<f64> = rho.iter().zip(&means).map(|(&t, &m)| t - m).collect();
        residual = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !residual.is_finite() {
            return Err(OracleError::Overflow);
        }
        if residual <= tol {
            break;
        }
        let mut hess = nalgebra::DMatrix::zeros(k, k);
        for i in 0..k {
            for j in i..k {
                let c: f64 = p
                    .iter()
                    .zip(np.r()[i].iter().zip(&np.r()[j]))
                    .map(|(&w, (&a, &b))| w * a * b)
                    .sum::<f64>()
                    - means[i] * means[j];
                hess[(i, j)] = c;
                hess[(j, i)] = c;
            }
        }
        let g = nalgebra::DVector::from_column_slice(&grad);
        let step = match nalgebra::Cholesky::new(hess.clone()) {
            Some(ch) => ch.solve(&g),
            None => match hess.lu().solve(&g) {
                Some(s) => s,
                None => {
                    return Err(OracleError::NonConvergence {
                        iterations: iter,
                        residual,
                    })
                }
            },
        };
        // Descent direction for F: δ = −H⁻¹ ∇F; here ∇F = grad, so move −step.
        let slope: f64 = -grad
            .iter()
            .zip(step.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(step.iter())
                .map(|(&l, &s)| l - t * s)
                .collect();
            let (lz, pw) = log_partition(np, &trial);
            let f_trial = lz + trial.iter().zip(rho).map(|(&l, &r)| l * r).sum::<f64>();
            // The epsilon slack keeps the line search from stalling once the
            // quadratic decrease falls below f64 resolution of the objective.
            let slack = f64::EPSILON * (1.0 + objective.abs());
            if f_trial.is_finite() && f_trial <= objective + ARMIJO_SLOPE * t * slope + slack {
                lambda = trial;
                log_z = lz;
                p = pw;
                objective = f_trial;
                path.push(objective);
                accepted = true;
                break;
            }
            t *= BACKTRACK_FACTOR;
        }
        if !accepted {
            return Err(OracleError::NonConvergence {
                iterations: iter,
                residual,
            });
        }
    }
    if residual > tol {
        return Err(OracleError::NonConvergence {
            iterations,
            residual,
        });
    }

    let lambda0_prime = log_z;
    let sigma = np.s().map(|s| p.iter().zip(s).map(|(&w, &v)| w * v).sum());
    let kl: f64 = p
        .iter()
        .zip(np.q())
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum();
    Ok(ExactSolution {
        lambda0: lambda0_prime - 1.0,
        lambda0_prime,
        p,
        sigma,
        kl,
        iterations,
        residual,
        objective_path: path,
        lambda,
    })
}

/// Central-difference Jacobian at 0 of the moment map `λ ↦ E_{P(λ)} r` for
/// the exponential family `p_σ(λ) ∝ q_σ·exp(+Σ λ_i r_i(σ))` through Q.
///
/// For a normalized problem this is the covariance pairing, the identity;
/// un-normalized problems give `Cov_Q(r_i, r_j)`.
pub fn jacobian_at_zero(np: &NormalizedProblem) -> Vec<Vec<f64>> {
    let k = np.k();
    let h = 1e-5;
    let moment_map = |lambda: &[f64]| -> Vec<f64> {
        let n = np.n();
        let mut exponents = vec![0.0; n];
        for (i, row) in np.r().iter().enumerate() {
            for (e, v) in exponents.iter_mut().zip(row) {
                *e += lambda[i] * v;
            }
        }
        let max = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = np
            .q()
            .iter()
            .zip(&exponents)
            .map(|(&q, &e)| q * (e - max).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        np.r()
            .iter()
            .map(|row| weights.iter().zip(row).map(|(&w, &v)| w * v).sum::<f64>() / z)
            .collect()
    };
    let mut jac = vec![vec![0.0; k]; k];
    for j in 0..k {
        let mut lp = vec![0.0; k];
        lp[j] = h;
        let plus = moment_map(&lp);
        lp[j] = -h;
        let minus = moment_map(&lp);
        for i in 0..k {
            jac[i][j] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Maximum errors at one sampling radius.
#[derive(Clone, Debug, Serialize)]
pub struct RadiusReport {
    pub radius: f64,
    /// Max over outputs and samples.
    pub max_error: f64,
    /// Per-output max over samples, as (output, error) pairs.
    pub per_output: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FailureRecord {
    pub radius: f64,
    pub rho: Vec<f64>,
    pub message: String,
}

/// Series-versus-oracle comparison with error-vs-radius slopes.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub order: u32,
    pub samples: usize,
    pub radii: Vec<f64>,
    pub per_radius: Vec<RadiusReport>,
    /// Log–log regression slope of max error against radius; per-output
    /// slopes are `None` when the series is exact to rounding there.
    pub global_slope: f64,
    pub per_output_slopes: Vec<(usize, Option<f64>)>,
    pub failures: Vec<FailureRecord>,
}

/// Errors below this are treated as exact (no slope is fit).
const EXACT_FLOOR: f64 = 1e-14;

/// For each radius, draws `samples` points uniformly on the sphere of that
/// radius, compares `evaluate(table)` against [`solve_exact`] per output, and
/// fits the log–log slope of max error versus radius. A degree-d table should
/// give a slope of at least d + 0.5. Oracle failures are recorded and their
/// points skipped; more than half failing aborts.
pub fn verify_series(
    np: &NormalizedProblem,
    table: &CoefficientTable,
    radii: &[f64],
    samples: usize,
    seed: u64,
) -> Result<VerificationReport, OracleError> {
    let k = np.k();
    let outputs: Vec<usize> = table.outputs.keys().copied().collect();
    let mut per_radius = Vec::with_capacity(radii.len());
    let mut failures = Vec::new();
    let mut total_points = 0usize;

    for (ri, &radius) in radii.iter().enumerate() {
        // Points drawn from a per-radius stream so the sample set at each
        // radius is independent of the radius list order.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ri as u64) << 32));
        let points: Vec<Vec<f64>> = (0..samples)
            .map(|_| sphere_point(&mut rng, k, radius))
            .collect();
        total_points += points.len();

        let results: Vec<Result<Vec<(usize, f64)>, String>> = points
            .par_iter()
            .map(|rho| {
                let sol = solve_exact(np, rho, 1e-12).map_err(|e| e.to_string())?;
                let predicted = evaluate(table, rho).map_err(|e| e.to_string())?;
                let mut errs = Vec::with_capacity(predicted.len());
                for (j, value) in predicted {
                    let truth = if j == 0 {
                        sol.lambda0_prime
                    } else if j <= k {
                        sol.lambda[j - 1]
                    } else {
                        sol.sigma.ok_or_else(|| "target absent".to_string())?
                    };
                    errs.push((j, (value - truth).abs()));
                }
                Ok(errs)
            })
            .collect();

        let mut per_output: Vec<(usize, f64)> = outputs.iter().map(|&j| (j, 0.0)).collect();
        let mut max_error = 0.0f64;
        for (point, res) in points.iter().zip(results) {
            match res {
                Ok(errs) => {
                    for (slot, (_, e)) in per_output.iter_mut().zip(&errs) {
                        slot.1 = slot.1.max(*e);
                    }
                    for (_, e) in errs {
                        max_error = max_error.max(e);
                    }
                }
                Err(message) => failures.push(FailureRecord {
                    radius,
                    rho: point.clone(),
                    message,
                }),
            }
        }
        per_radius.push(RadiusReport {
            radius,
            max_error,
            per_output,
        });
    }

    if failures.len() * 2 > total_points {
        return Err(OracleError::TooManyFailures {
            failed: failures.len(),
            total: total_points,
        });
    }

    let global_slope = fit_slope(
        &per_radius
            .iter()
            .map(|r| (r.radius, r.max_error))
            .collect::<Vec<_>>(),
    )
    .unwrap_or(f64::INFINITY);
    let per_output_slopes: Vec<(usize, Option<f64>)> = outputs
        .iter()
        .map(|&j| {
            let pts: Vec<(f64, f64)> = per_radius
                .iter()
                .map(|r| {
                    let e = r
                        .per_output
                        .iter()
                        .find(|(jj, _)| *jj == j)
                        .map(|(_, e)| *e)
                        .unwrap_or(0.0);
                    (r.radius, e)
                })
                .collect();
            (j, fit_slope(&pts))
        })
        .collect();

    Ok(VerificationReport {
        seed,
        order: table.order,
        samples,
        radii: radii.to_vec(),
        per_radius,
        global_slope,
        per_output_slopes,
        failures,
    })
}

/// Least-squares slope of ln(err) against ln(radius); `None` when every
/// error sits at the exactness floor.
fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(r, e)| *r > 0.0 && *e > EXACT_FLOOR)
        .map(|&(r, e)| (r.ln(), e.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

fn sphere_point<R: Rng>(rng: &mut R, k: usize, radius: f64) -> Vec<f64> {
    loop {
        // Box-Muller normals, normalized to the sphere.
        let mut v: Vec<f64> = (0..k)
            .map(|_| {
                let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.random_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for x in v.iter_mut() {
                *x *= radius / norm;
            }
            return v;
        }
    }
}
