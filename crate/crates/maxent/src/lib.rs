//! Exact Taylor expansions of constrained minimum-divergence (maximum
//! entropy) distributions, computed as weighted sums over labeled rooted
//! trees and verified against a direct convex-optimization solver.
//!
//! Given a finite alphabet with reference weights `q` and constraint
//! observables `r_1..r_k`, the distribution minimizing `D(P‖Q)` subject to
//! `E_P r_i = ρ_i` has exponential form
//! `p_σ = q_σ·exp(−1 − λ_0 − Σ λ_i r_i(σ))`. This crate expands the
//! exponential parameters `λ_i(ρ)` — and the expectation `σ(ρ) = E_P s` of a
//! further target observable — as multivariate Taylor series around `ρ = 0`,
//! with coefficients given explicitly by finite sums over edge-labeled
//! rooted trees weighted by joint moments or joint cumulants of the
//! observables.
//!
//! Modules:
//! - [`problem`]: ingestion, validation, covariance-orthonormalization;
//! - [`algebra`]: multi-indices, truncated multivariate series, symmetric
//!   coefficient tables;
//! - [`moments`]: joint moments and set-partition cumulants;
//! - [`trees`]: canonical labeled rooted trees, enumeration, automorphisms,
//!   amplitudes;
//! - [`critical`]: the generic perturbed-critical-point engine (fixed-point
//!   iteration, height-truncated tree sums, full series expansion);
//! - [`expansion`]: the λ and σ coefficient tables, by the engine route and
//!   by direct tree enumeration;
//! - [`oracle`]: damped-Newton solver, moment-map Jacobian, and
//!   series-versus-solver verification with convergence-order slopes;
//! - [`cli`]: the `maxent` command-line interface.

pub mod algebra;
pub mod cli;
pub mod critical;
pub mod expansion;
pub mod moments;
pub mod oracle;
pub mod problem;
pub mod testutil;
pub mod trees;

pub use algebra::{MultiIndex, TruncatedSeries};
pub use expansion::{Basis, CoefficientTable};
pub use problem::{AffineTransform, NormalizedProblem, Problem};
