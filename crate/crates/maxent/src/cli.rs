//! Command-line front end: ingestion, normalization, expansion, evaluation,
//! tree inspection, and series-versus-solver verification.
//!
//! All reports are JSON on stdout with floats printed to 17 significant
//! digits, so identical inputs and seeds produce byte-identical output.
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::algebra::MultiIndex;
use crate::expansion::{
    coefficient_report, evaluate, expand, table_from_json, table_to_json, Basis, ExpansionError,
};
use crate::oracle::{self, OracleError};
use crate::problem::{
    load_problem, load_samples, map_constraints, normalize_with, NormalizedProblem, Problem,
    ProblemError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "maxent",
    version,
    about = "Taylor expansions of constrained minimum-divergence distributions as weighted tree sums, with a direct convex solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum BasisArg {
    #[default]
    Moment,
    Cumulant,
}

impl From<BasisArg> for Basis {
    fn from(b: BasisArg) -> Basis {
        match b {
            BasisArg::Moment => Basis::Moment,
            BasisArg::Cumulant => Basis::Cumulant,
        }
    }
}

#[derive(Args, Debug)]
struct InputOpts {
    /// Problem document (JSON), or comma-separated sample records with --csv.
    input: PathBuf,
    /// Read the input as sample records `symbol,v1,…,vk[,s]`.
    #[arg(long)]
    csv: bool,
    /// With --csv, read the last column as the target observable.
    #[arg(long)]
    with_target: bool,
    /// Drop dependent constraint rows instead of failing.
    #[arg(long)]
    drop_dependent: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a problem and emit its normalized form plus the affine
    /// change of constraint coordinates.
    Normalize {
        #[command(flatten)]
        input: InputOpts,
        /// Pivot tolerance for the covariance Gram–Schmidt.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Compute coefficient tables for the exponential parameters and, when a
    /// target row is present, the target expectation.
    Expand {
        #[command(flatten)]
        input: InputOpts,
        /// Maximum total degree of the expansion.
        #[arg(long)]
        order: u32,
        #[arg(long, value_enum, default_value_t)]
        basis: BasisArg,
        /// Include contributing-tree counts per coefficient.
        #[arg(long)]
        diagnostics: bool,
    },
    /// Evaluate a stored coefficient table at a point.
    Eval {
        #[command(flatten)]
        input: InputOpts,
        /// Coefficient-table JSON produced by `expand`.
        #[arg(long)]
        table: PathBuf,
        /// Constraint values, comma-separated.
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// Interpret --rho in raw coordinates and route it through the
        /// problem's affine transform.
        #[arg(long)]
        raw: bool,
    },
    /// Solve the divergence minimization at given normalized constraint
    /// values.
    Solve {
        #[command(flatten)]
        input: InputOpts,
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// Gradient-norm convergence tolerance.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Per-tree breakdown of a single coefficient.
    Trees {
        #[command(flatten)]
        input: InputOpts,
        /// Output index: 0 for the partition coordinate, 1..=k for the
        /// exponential parameters, k+1 for the target expectation.
        #[arg(long)]
        output: usize,
        /// Multi-index exponents, comma-separated (k entries).
        #[arg(long, value_delimiter = ',')]
        index: Vec<u32>,
        #[arg(long, value_enum, default_value_t)]
        basis: BasisArg,
    },
    /// Compare table predictions against the solver on radius spheres and
    /// report error slopes.
    Verify {
        #[command(flatten)]
        input: InputOpts,
        #[arg(long)]
        order: u32,
        #[arg(long, value_enum, default_value_t)]
        basis: BasisArg,
        /// Sphere radii, comma-separated.
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
        /// Sample points per radius.
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Include wall-clock time in the report (breaks byte determinism).
        #[arg(long)]
        timing: bool,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<ProblemError> for Failure {
    fn from(e: ProblemError) -> Self {
        Failure::new(EXIT_DATA, e.to_string())
    }
}

impl From<ExpansionError> for Failure {
    fn from(e: ExpansionError) -> Self {
        let code = match &e {
            ExpansionError::UnknownOutput(_)
            | ExpansionError::BadIndex { .. }
            | ExpansionError::ZeroOrder
            | ExpansionError::OrderTooLarge(_) => EXIT_USAGE,
            ExpansionError::TargetAbsent
            | ExpansionError::Parse(_)
            | ExpansionError::Moments(_) => EXIT_DATA,
            ExpansionError::Critical(_) | ExpansionError::Algebra(_) => EXIT_NUMERICAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        let code = match &e {
            OracleError::Dimension { .. } => EXIT_USAGE,
            OracleError::Expansion(_) => EXIT_DATA,
            _ => EXIT_NUMERICAL,
        };
        Failure::new(code, e.to_string())
    }
}

/// Runs the CLI on the given argument list and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the same path
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(doc) => {
            let mut stdout = std::io::stdout().lock();
            let rendered = to_json_string(&doc);
            let _ = writeln!(stdout, "{rendered}");
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Caps rayon's parallelism from MAXENT_THREADS when set; later calls keep
/// the first configuration.
fn configure_threads() {
    if let Ok(v) = std::env::var("MAXENT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn load_input(opts: &InputOpts) -> Result<Problem, Failure> {
    let text = std::fs::read_to_string(&opts.input).map_err(|e| {
        Failure::new(
            EXIT_DATA,
            format!("cannot read {}: {e}", opts.input.display()),
        )
    })?;
    let problem = if opts.csv {
        load_samples(&text, opts.with_target)?
    } else {
        load_problem(&text, opts.drop_dependent)?
    };
    Ok(problem)
}

fn normalized_input(
    opts: &InputOpts,
    tol: f64,
) -> Result<(NormalizedProblem, crate::problem::AffineTransform), Failure> {
    let problem = load_input(opts)?;
    Ok(normalize_with(&problem, tol, opts.drop_dependent)?)
}

fn dispatch(command: Command) -> Result<serde_json::Value, Failure> {
    match command {
        Command::Normalize { input, tol } => {
            let (np, transform) = normalized_input(&input, tol)?;
            Ok(serde_json::json!({
                "problem": np.problem,
                "transform": transform,
            }))
        }
        Command::Expand {
            input,
            order,
            basis,
            diagnostics,
        } => {
            let (np, _) = normalized_input(&input, 1e-9)?;
            let mut table = expand(&np, basis.into(), order)?;
            if !diagnostics {
                table.tree_counts.clear();
            }
            Ok(table_to_json(&table))
        }
        Command::Eval {
            input,
            table,
            rho,
            raw,
        } => {
            let (np, transform) = normalized_input(&input, 1e-9)?;
            let text = std::fs::read_to_string(&table).map_err(|e| {
                Failure::new(EXIT_DATA, format!("cannot read {}: {e}", table.display()))
            })?;
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::new(EXIT_DATA, format!("table parse: {e}")))?;
            let table = table_from_json(&value)?;
            if table.k != np.k() {
                return Err(Failure::new(
                    EXIT_DATA,
                    format!("table has k = {}, problem has k = {}", table.k, np.k()),
                ));
            }
            if rho.len() != np.k() {
                return Err(Failure::new(
                    EXIT_USAGE,
                    format!("--rho has {} entries, expected {}", rho.len(), np.k()),
                ));
            }
            let normalized_rho = if raw {
                map_constraints(&transform, &rho)
            } else {
                rho.clone()
            };
            let outputs = evaluate(&table, &normalized_rho)?;
            let outputs: Vec<serde_json::Value> = outputs
                .into_iter()
                .map(|(j, v)| serde_json::json!({"index": j, "value": v}))
                .collect();
            Ok(serde_json::json!({
                "rho_input": rho,
                "raw": raw,
                "normalized_rho": normalized_rho,
                "outputs": outputs,
            }))
        }
        Command::Solve { input, rho, tol } => {
            let (np, _) = normalized_input(&input, 1e-9)?;
            let solution = oracle::solve_exact(&np, &rho, tol)?;
            let mut doc = serde_json::to_value(&solution)
                .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?;
            doc["rho"] = serde_json::json!(rho);
            Ok(doc)
        }
        Command::Trees {
            input,
            output,
            index,
            basis,
        } => {
            let (np, _) = normalized_input(&input, 1e-9)?;
            let report = coefficient_report(&np, basis.into(), output, &MultiIndex(index))?;
            serde_json::to_value(&report).map_err(|e| Failure::new(EXIT_DATA, e.to_string()))
        }
        Command::Verify {
            input,
            order,
            basis,
            radii,
            samples,
            seed,
            timing,
        } => {
            if radii.is_empty() || radii.iter().any(|&r| r <= 0.0) {
                return Err(Failure::new(EXIT_USAGE, "radii must be positive"));
            }
            let started = Instant::now();
            let (np, _) = normalized_input(&input, 1e-9)?;
            let table = expand(&np, basis.into(), order)?;
            let report = oracle::verify_series(&np, &table, &radii, samples, seed)?;
            let mut doc = serde_json::to_value(&report)
                .map_err(|e| Failure::new(EXIT_NUMERICAL, e.to_string()))?;
            doc["basis"] = serde_json::json!(Basis::from(basis));
            if timing {
                doc["wall_time_ms"] = serde_json::json!(started.elapsed().as_millis() as u64);
            }
            Ok(doc)
        }
    }
}

/// Serializes with every float at 17 significant digits (`{:.16e}`), making
/// output byte-deterministic and round-trip exact.
pub fn to_json_string(value: &serde_json::Value) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value
        .serialize(&mut ser)
        .expect("in-memory serialization cannot fail");
    String::from_utf8(buf).expect("serializer emits UTF-8")
}

struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        // fold −0.0 into 0.0 so equal values print identically
        let value = if value == 0.0 { 0.0 } else { value };
        write!(writer, "{value:.16e}")
    }
}
