//! Coefficient tables for the exponential parameters and the target
//! expectation: the headline expansions `λ_j(ρ) = Σ_I L_{j,I} ρ^I` and
//! `σ(ρ) = Σ_I M_I ρ^I`.
//!
//! Two independent routes produce the λ tables. The engine route builds the
//! tensor family of the dual objective (moment couplings over labels `0..=k`,
//! or cumulant couplings over `1..=k` after eliminating the partition
//! coordinate) and expands its critical point through [`crate::critical`].
//! The literal route enumerates the tree families directly and sums signed
//! amplitudes per leaf multi-index. They must agree to ~1e-12 and are tested
//! against each other and against the convex-optimization oracle.
//!
//! The target expectation is composed from its star expansion: couplings
//! `±E_Q[s·∏r]` (or `±κ(s,…)`) contracted against powers of the λ series.
//! The tree enumeration with a relaxed root that this composition induces is
//! exposed through [`sigma_literal`] as a diagnostic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    apply_multilinear, factorial, AlgebraError, MultiIndex, SymmetricCoefficients, TruncatedSeries,
};
use crate::critical::{crit_series, CriticalError, TensorFamily};
use crate::moments::{CouplingSource, CumulantTable, MomentTable, MomentsError};
use crate::problem::NormalizedProblem;
use crate::trees::{amplitude, enumerate_trees, TreeFamilySpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    Moment,
    Cumulant,
}

impl std::fmt::Display for Basis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Basis::Moment => write!(f, "moment"),
            Basis::Cumulant => write!(f, "cumulant"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExpansionError {
    #[error("problem has no target row")]
    TargetAbsent,
    #[error("output {0} not present in the table")]
    UnknownOutput(usize),
    #[error("multi-index has {got} entries, expected k = {k}")]
    BadIndex { got: usize, k: usize },
    #[error("order must be at least 1")]
    ZeroOrder,
    #[error("order {0} exceeds the supported maximum {MAX_ORDER}")]
    OrderTooLarge(u32),
    #[error("coefficient table parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Moments(#[from] MomentsError),
    #[error(transparent)]
    Critical(#[from] CriticalError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Largest supported expansion order. Tree counts explode well before this;
/// the cap keeps automorphism factorials inside u64 and the set-partition
/// sums of the cumulant tables finite in practice.
pub const MAX_ORDER: u32 = 12;

fn validate_order(d: u32) -> Result<(), ExpansionError> {
    if d == 0 {
        return Err(ExpansionError::ZeroOrder);
    }
    if d > MAX_ORDER {
        return Err(ExpansionError::OrderTooLarge(d));
    }
    Ok(())
}

/// Taylor coefficients per output index: `0` is the partition coordinate
/// λ'_0, `1..=k` the exponential parameters, `k+1` the target expectation.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    pub basis: Basis,
    pub order: u32,
    pub k: usize,
    pub outputs: BTreeMap<usize, TruncatedSeries>,
    /// Contributing-tree counts per output and monomial, where the engine
    /// tracked them.
    pub tree_counts: BTreeMap<usize, BTreeMap<MultiIndex, u64>>,
}

impl CoefficientTable {
    pub fn series(&self, output: usize) -> Result<&TruncatedSeries, ExpansionError> {
        self.outputs
            .get(&output)
            .ok_or(ExpansionError::UnknownOutput(output))
    }

    /// Largest entrywise difference over shared outputs.
    pub fn max_abs_diff(&self, other: &CoefficientTable) -> f64 {
        let mut m = 0.0f64;
        for (j, series) in &self.outputs {
            if let Some(o) = other.outputs.get(j) {
                m = m.max(series.max_abs_diff(o));
            }
        }
        m
    }
}

fn for_each_sorted_multiset(
    min_label: usize,
    max_label: usize,
    size: usize,
    f: &mut impl FnMut(&[usize]),
) {
    fn go(
        max: usize,
        remaining: usize,
        start: usize,
        cur: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if remaining == 0 {
            f(cur);
            return;
        }
        for l in start..=max {
            cur.push(l);
            go(max, remaining - 1, l, cur, f);
            cur.pop();
        }
    }
    go(max_label, size, min_label, &mut Vec::new(), f);
}

fn parity_sign(l: usize) -> f64 {
    if l.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Tensor family of the dual objective over labels `0..=k`:
/// `θ_i = ρ_i` for `i = 1..=k`, `θ_0 = 0`, and
/// `θ_{i_1..i_l} = (−1)^l E_Q[∏ r]` for `l ≥ 3`.
fn moment_engine_family(
    np: &NormalizedProblem,
    d: u32,
    moments: &MomentTable,
) -> Result<TensorFamily, ExpansionError> {
    let k = np.k();
    let mut family = TensorFamily::new(k + 1, k, d);
    for i in 1..=k {
        family.set(&[i], TruncatedSeries::variable(k, d, i - 1, 1.0))?;
    }
    for l in 3..=(d as usize + 1) {
        let mut err = None;
        for_each_sorted_multiset(0, k, l, &mut |labels| {
            if err.is_some() {
                return;
            }
            match moments.joint_moment(labels) {
                Ok(m) if m != 0.0 => {
                    let series = TruncatedSeries::constant(k, d, parity_sign(l) * m);
                    if let Err(e) = family.set(labels, series) {
                        err = Some(e.into());
                    }
                }
                Ok(_) => {}
                Err(e) => err = Some(e.into()),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(family)
}

/// Tensor family after eliminating the partition coordinate, over engine
/// labels `0..k−1` standing for problem labels `1..=k`:
/// `θ_{i} = ρ_{i+1}`, `θ_{i_1..i_l} = (−1)^l κ(r_{i_1+1},…)` for `l ≥ 3`.
fn cumulant_engine_family(
    np: &NormalizedProblem,
    d: u32,
    cumulants: &CumulantTable,
) -> Result<TensorFamily, ExpansionError> {
    let k = np.k();
    let mut family = TensorFamily::new(k, k, d);
    for i in 0..k {
        family.set(&[i], TruncatedSeries::variable(k, d, i, 1.0))?;
    }
    for l in 3..=(d as usize + 1) {
        let mut err = None;
        for_each_sorted_multiset(1, k, l, &mut |labels| {
            if err.is_some() {
                return;
            }
            match cumulants.joint_cumulant(labels) {
                Ok(c) if c != 0.0 => {
                    let engine: Vec<usize> = labels.iter().map(|&l| l - 1).collect();
                    let series = TruncatedSeries::constant(k, d, parity_sign(l) * c);
                    if let Err(e) = family.set(&engine, series) {
                        err = Some(e.into());
                    }
                }
                Ok(_) => {}
                Err(e) => err = Some(e.into()),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(family)
}

/// λ tables through the generic engine.
///
/// Moment basis: outputs `0..=k` are the critical-point coordinates.
/// Cumulant basis: outputs `1..=k` come from the reduced engine and λ'_0 is
/// derived by composing the cumulant generating function with the λ series.
pub fn lambda_coefficients(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
) -> Result<CoefficientTable, ExpansionError> {
    validate_order(d)?;
    let k = np.k();
    let mut outputs = BTreeMap::new();
    let mut tree_counts = BTreeMap::new();
    match basis {
        Basis::Moment => {
            let moments = MomentTable::build(&np.problem, d as usize + 1);
            let family = moment_engine_family(np, d, &moments)?;
            let cs = crit_series(&family, d)?;
            for (j, series) in cs.coords.into_iter().enumerate() {
                outputs.insert(j, series);
            }
            if let Some(counts) = cs.tree_counts {
                for (j, c) in counts.into_iter().enumerate() {
                    tree_counts.insert(j, c);
                }
            }
        }
        Basis::Cumulant => {
            let cumulants = CumulantTable::build(&np.problem, d as usize + 1);
            let family = cumulant_engine_family(np, d, &cumulants)?;
            let cs = crit_series(&family, d)?;
            let lambdas = cs.coords.clone();
            for (e, series) in cs.coords.into_iter().enumerate() {
                outputs.insert(e + 1, series);
            }
            if let Some(counts) = cs.tree_counts {
                for (e, c) in counts.into_iter().enumerate() {
                    tree_counts.insert(e + 1, c);
                }
            }
            outputs.insert(0, log_normalizer_series(&cumulants, &lambdas, k, d)?);
        }
    }
    Ok(CoefficientTable {
        basis,
        order: d,
        k,
        outputs,
        tree_counts,
    })
}

/// λ'_0(ρ) as the cumulant generating function of `−λ·r` composed with the
/// λ series: `Σ_l (−1)^l Σ κ(r_{i_1}…r_{i_l})/∏mult! · ∏ λ_{i_j}`.
fn log_normalizer_series(
    cumulants: &CumulantTable,
    lambdas: &[TruncatedSeries],
    k: usize,
    d: u32,
) -> Result<TruncatedSeries, ExpansionError> {
    let mut out = TruncatedSeries::zero(k, d);
    for l in 1..=(d as usize) {
        let mut theta = SymmetricCoefficients::new(k, l);
        let mut err = None;
        for_each_sorted_multiset(1, k, l, &mut |labels| {
            if err.is_some() {
                return;
            }
            match cumulants.joint_cumulant(labels) {
                Ok(c) if c != 0.0 => {
                    let engine: Vec<usize> = labels.iter().map(|&x| x - 1).collect();
                    if let Err(e) = theta.set(&engine, parity_sign(l) * c) {
                        err = Some(e.into());
                    }
                }
                Ok(_) => {}
                Err(e) => err = Some(e.into()),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if theta.is_empty() {
            continue;
        }
        let args: Vec<&[TruncatedSeries]> = vec![lambdas; l];
        let term = apply_multilinear(&theta, &args)?;
        out = out.add(&term.scale(1.0 / factorial(l as u64) as f64))?;
    }
    out.prune(0.0);
    Ok(out)
}

/// σ(ρ) by star composition with the λ series (single output, index `k+1`).
pub fn sigma_coefficients(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
) -> Result<CoefficientTable, ExpansionError> {
    let lambda = lambda_coefficients(np, basis, d)?;
    let series = sigma_series(np, basis, d, &lambda)?;
    let k = np.k();
    let mut outputs = BTreeMap::new();
    outputs.insert(k + 1, series);
    Ok(CoefficientTable {
        basis,
        order: d,
        k,
        outputs,
        tree_counts: BTreeMap::new(),
    })
}

fn sigma_series(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
    lambda: &CoefficientTable,
) -> Result<TruncatedSeries, ExpansionError> {
    if np.s().is_none() {
        return Err(ExpansionError::TargetAbsent);
    }
    let k = np.k();
    match basis {
        Basis::Moment => {
            let moments = MomentTable::build(&np.problem, d as usize + 1);
            // slot vector (λ'_0, λ_1, …, λ_k) over star labels 0..=k
            let mut slot: Vec<TruncatedSeries> = Vec::with_capacity(k + 1);
            for j in 0..=k {
                slot.push(lambda.series(j)?.clone());
            }
            let mut out = TruncatedSeries::constant(k, d, moments.joint_moment(&[k + 1])?);
            for l in 1..=(d as usize) {
                let mut theta = SymmetricCoefficients::new(k + 1, l);
                let mut err = None;
                for_each_sorted_multiset(0, k, l, &mut |labels| {
                    if err.is_some() {
                        return;
                    }
                    let mut with_target = labels.to_vec();
                    with_target.push(k + 1);
                    match moments.joint_moment(&with_target) {
                        Ok(m) if m != 0.0 => {
                            if let Err(e) = theta.set(labels, parity_sign(l) * m) {
                                err = Some(e.into());
                            }
                        }
                        Ok(_) => {}
                        Err(e) => err = Some(e.into()),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                if theta.is_empty() {
                    continue;
                }
                let args: Vec<&[TruncatedSeries]> = vec![&slot; l];
                let term = apply_multilinear(&theta, &args)?;
                out = out.add(&term.scale(1.0 / factorial(l as u64) as f64))?;
            }
            out.prune(0.0);
            Ok(out)
        }
        Basis::Cumulant => {
            let cumulants = CumulantTable::build(&np.problem, d as usize + 1);
            let mut slot: Vec<TruncatedSeries> = Vec::with_capacity(k);
            for j in 1..=k {
                slot.push(lambda.series(j)?.clone());
            }
            let mut out = TruncatedSeries::constant(k, d, cumulants.joint_cumulant(&[k + 1])?);
            for l in 1..=(d as usize) {
                let mut theta = SymmetricCoefficients::new(k, l);
                let mut err = None;
                for_each_sorted_multiset(1, k, l, &mut |labels| {
                    if err.is_some() {
                        return;
                    }
                    let mut with_target = labels.to_vec();
                    with_target.push(k + 1);
                    match cumulants.joint_cumulant(&with_target) {
                        Ok(c) if c != 0.0 => {
                            let engine: Vec<usize> = labels.iter().map(|&x| x - 1).collect();
                            if let Err(e) = theta.set(&engine, parity_sign(l) * c) {
                                err = Some(e.into());
                            }
                        }
                        Ok(_) => {}
                        Err(e) => err = Some(e.into()),
                    }
                });
                if let Some(e) = err {
                    return Err(e);
                }
                if theta.is_empty() {
                    continue;
                }
                let args: Vec<&[TruncatedSeries]> = vec![&slot; l];
                let term = apply_multilinear(&theta, &args)?;
                out = out.add(&term.scale(1.0 / factorial(l as u64) as f64))?;
            }
            out.prune(0.0);
            Ok(out)
        }
    }
}

/// Full table: λ outputs plus σ when the target row is present.
pub fn expand(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
) -> Result<CoefficientTable, ExpansionError> {
    let mut table = lambda_coefficients(np, basis, d)?;
    if np.s().is_some() {
        let sigma = sigma_series(np, basis, d, &table)?;
        table.outputs.insert(np.k() + 1, sigma);
    }
    Ok(table)
}

/// λ tables by direct tree enumeration (the literal route): for each output,
/// sum signed amplitudes over the family's trees, bucketed by leaf
/// multi-index. Moment basis covers outputs `0..=k`; cumulant `1..=k`.
pub fn lambda_coefficients_literal(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
) -> Result<CoefficientTable, ExpansionError> {
    validate_order(d)?;
    let k = np.k();
    let mut outputs = BTreeMap::new();
    let table: Box<dyn CouplingSource> = match basis {
        Basis::Moment => Box::new(MomentTable::build(&np.problem, d as usize + 1)),
        Basis::Cumulant => Box::new(CumulantTable::build(&np.problem, d as usize + 1)),
    };
    let output_range: Vec<usize> = match basis {
        Basis::Moment => (0..=k).collect(),
        Basis::Cumulant => (1..=k).collect(),
    };
    for j in output_range {
        let spec = match basis {
            Basis::Moment => TreeFamilySpec::moment(k, j),
            Basis::Cumulant => TreeFamilySpec::cumulant(k, j),
        };
        let mut series = TruncatedSeries::zero(k, d);
        for tree in enumerate_trees(&spec, d as usize) {
            let amp = amplitude(&tree, &spec, table.as_ref(), true)?;
            let c = amp.contribution();
            series.add_term(amp.leaf_index, c);
        }
        series.prune(0.0);
        outputs.insert(j, series);
    }
    Ok(CoefficientTable {
        basis,
        order: d,
        k,
        outputs,
        tree_counts: BTreeMap::new(),
    })
}

/// σ(ρ) by direct enumeration of the relaxed-root target family — the
/// diagnostic route for the composed trees.
pub fn sigma_literal(
    np: &NormalizedProblem,
    basis: Basis,
    d: u32,
) -> Result<TruncatedSeries, ExpansionError> {
    validate_order(d)?;
    if np.s().is_none() {
        return Err(ExpansionError::TargetAbsent);
    }
    let k = np.k();
    let (spec, table): (TreeFamilySpec, Box<dyn CouplingSource>) = match basis {
        Basis::Moment => (
            TreeFamilySpec::target_moment(k),
            Box::new(MomentTable::build(&np.problem, d as usize + 1)),
        ),
        Basis::Cumulant => (
            TreeFamilySpec::target_cumulant(k),
            Box::new(CumulantTable::build(&np.problem, d as usize + 1)),
        ),
    };
    let mut series = TruncatedSeries::zero(k, d);
    for tree in enumerate_trees(&spec, d as usize) {
        let amp = amplitude(&tree, &spec, table.as_ref(), true)?;
        let c = amp.contribution();
        series.add_term(amp.leaf_index, c);
    }
    series.prune(0.0);
    Ok(series)
}

/// Evaluates every output of a table at a point, in output order.
pub fn evaluate(
    table: &CoefficientTable,
    rho: &[f64],
) -> Result<Vec<(usize, f64)>, ExpansionError> {
    if rho.len() != table.k {
        return Err(ExpansionError::BadIndex {
            got: rho.len(),
            k: table.k,
        });
    }
    let mut out = Vec::with_capacity(table.outputs.len());
    for (&j, series) in &table.outputs {
        out.push((j, series.evaluate(rho)?));
    }
    Ok(out)
}

/// One tree's line in a coefficient report.
#[derive(Clone, Debug, Serialize)]
pub struct TreeContribution {
    pub encoding: String,
    pub aut: u64,
    pub amplitude: f64,
    pub contribution: f64,
}

/// Per-tree breakdown of a single table entry.
#[derive(Clone, Debug, Serialize)]
pub struct CoefficientReport {
    pub basis: Basis,
    pub output: usize,
    pub index: Vec<u32>,
    pub trees: Vec<TreeContribution>,
    pub total: f64,
}

/// Lists every tree feeding coefficient `(output, index)` with its amplitude,
/// automorphism count, and contribution; the total is their sum.
pub fn coefficient_report(
    np: &NormalizedProblem,
    basis: Basis,
    output: usize,
    index: &MultiIndex,
) -> Result<CoefficientReport, ExpansionError> {
    let k = np.k();
    if index.len() != k {
        return Err(ExpansionError::BadIndex {
            got: index.len(),
            k,
        });
    }
    let order = index.degree() as usize;
    let (spec, table): (TreeFamilySpec, Box<dyn CouplingSource>) = match (basis, output) {
        (Basis::Moment, j) if j <= k => (
            TreeFamilySpec::moment(k, j),
            Box::new(MomentTable::build(&np.problem, order + 1)),
        ),
        (Basis::Cumulant, j) if (1..=k).contains(&j) => (
            TreeFamilySpec::cumulant(k, j),
            Box::new(CumulantTable::build(&np.problem, order + 1)),
        ),
        (Basis::Moment, j) if j == k + 1 => {
            if np.s().is_none() {
                return Err(ExpansionError::TargetAbsent);
            }
            (
                TreeFamilySpec::target_moment(k),
                Box::new(MomentTable::build(&np.problem, order + 1)),
            )
        }
        (Basis::Cumulant, j) if j == k + 1 => {
            if np.s().is_none() {
                return Err(ExpansionError::TargetAbsent);
            }
            (
                TreeFamilySpec::target_cumulant(k),
                Box::new(CumulantTable::build(&np.problem, order + 1)),
            )
        }
        (_, j) => return Err(ExpansionError::UnknownOutput(j)),
    };

    let mut trees_out = Vec::new();
    let mut total = 0.0;
    for tree in enumerate_trees(&spec, order) {
        let amp = amplitude(&tree, &spec, table.as_ref(), true)?;
        if &amp.leaf_index != index {
            continue;
        }
        total += amp.contribution();
        trees_out.push(TreeContribution {
            encoding: tree.encoding(),
            aut: amp.aut_size,
            amplitude: amp.value,
            contribution: amp.contribution(),
        });
    }
    Ok(CoefficientReport {
        basis,
        output,
        index: index.0.clone(),
        trees: trees_out,
        total,
    })
}

/// Serialized form of a table, per the published schema.
pub fn table_to_json(table: &CoefficientTable) -> serde_json::Value {
    let outputs: Vec<serde_json::Value> = table
        .outputs
        .iter()
        .map(|(&j, series)| {
            let counts = table.tree_counts.get(&j);
            let entries: Vec<serde_json::Value> = series
                .terms()
                .map(|(idx, c)| {
                    let mut entry = serde_json::json!({
                        "index": idx.0,
                        "value": c,
                    });
                    if let Some(counts) = counts {
                        if let Some(&t) = counts.get(idx) {
                            entry["trees"] = serde_json::json!(t);
                        }
                    }
                    entry
                })
                .collect();
            serde_json::json!({ "index": j, "series": entries })
        })
        .collect();
    serde_json::json!({
        "basis": table.basis,
        "order": table.order,
        "k": table.k,
        "outputs": outputs,
    })
}

/// Parses a table back from its JSON document.
pub fn table_from_json(value: &serde_json::Value) -> Result<CoefficientTable, ExpansionError> {
    let bad = |m: &str| ExpansionError::Parse(m.to_string());
    let basis = match value.get("basis").and_then(|v| v.as_str()) {
        Some("moment") => Basis::Moment,
        Some("cumulant") => Basis::Cumulant,
        _ => return Err(bad("missing or unknown basis")),
    };
    let order = value
        .get("order")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing order"))? as u32;
    let k = value
        .get("k")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| bad("missing k"))? as usize;
    let mut outputs = BTreeMap::new();
    let arr = value
        .get("outputs")
        .and_then(|v| v.as_array())
        .ok_or_else(|| bad("missing outputs"))?;
    for out in arr {
        let j = out
            .get("index")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| bad("output missing index"))? as usize;
        let mut series = TruncatedSeries::zero(k, order);
        for entry in out
            .get("series")
            .and_then(|v| v.as_array())
            .ok_or_else(|| bad("output missing series"))?
        {
            let idx: Vec<u32> = entry
                .get("index")
                .and_then(|v| v.as_array())
                .ok_or_else(|| bad("entry missing index"))?
                .iter()
                .map(|x| x.as_u64().map(|u| u as u32))
                .collect::<Option<_>>()
                .ok_or_else(|| bad("bad entry index"))?;
            if idx.len() != k {
                return Err(bad("entry index has wrong length"));
            }
            let v = entry
                .get("value")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| bad("entry missing value"))?;
            series.add_term(MultiIndex(idx), v);
        }
        outputs.insert(j, series);
    }
    Ok(CoefficientTable {
        basis,
        order,
        k,
        outputs,
        tree_counts: BTreeMap::new(),
    })
}
