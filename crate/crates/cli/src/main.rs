//! `schatten`: command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, unreadable or
//! malformed inputs), 2 for numerical or validation failures.

mod source;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use schatten::chebyshev::{cheby_coeffs, degree_bound, ChebyConfig, SpectralInterval};
use schatten::estimator::{self, EstimatorSpec, DEFAULT_LANCZOS_STEPS};
use schatten::harness::{self, ExperimentPlan, SCHEMA_VERSION};
use schatten::linops::{LinearOperator, SparseSym};
use schatten::matgen::{gen_synthetic, save_matrix_market, Family, SyntheticSpec};
use schatten::mc_estimator::{cheby_sample_bound, sample_bound, Method};
use schatten::oed_model::{HeatModel, HeatParams, PosteriorCovOp, PosteriorSolver};
use schatten::probes::Distribution;
use schatten::Error;

use source::parse_source;

#[derive(Debug, Parser)]
#[command(name = "schatten", version, about = "Matrix-free Schatten p-norm estimation")]
struct Cli {
    /// Worker threads (falls back to SCHATTEN_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Exact norm from a dense eigendecomposition.
    Exact {
        /// synth:<family>:<n>[:seed], mm:<path>, oed, identity:<n> or diag:<v1,v2,...>
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        p: f64,
    },
    /// Randomized estimate of the norm.
    Estimate {
        #[arg(long)]
        matrix: String,
        #[command(flatten)]
        est: EstimateArgs,
    },
    /// Sample-size and degree bounds.
    Bounds {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, default_value = "mc")]
        variant: Method,
    },
    /// Error-envelope experiment from a JSON plan.
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        /// CSV output (overrides the plan's `csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// JSON output (overrides the plan's `json`).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Posterior covariance of the heat-equation inverse problem.
    Oed {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        est: EstimateArgs,
        /// Posterior solver: lowrank or cg.
        #[arg(long, default_value = "lowrank")]
        solver: String,
        /// Also assemble the dense posterior and report the exact norm.
        #[arg(long)]
        exact: bool,
        /// Write the dense posterior covariance to a Matrix Market file.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Write a synthetic test matrix in Matrix Market format.
    Generate {
        #[arg(long)]
        family: Family,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Chebyshev coefficients of x^q on an interval.
    Coeffs {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        interval: SpectralInterval,
        #[arg(long = "N")]
        degree: usize,
    },
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long)]
    p: f64,
    #[arg(long = "M")]
    samples: usize,
    #[arg(long, default_value = "mc")]
    method: Method,
    /// Chebyshev degree.
    #[arg(long = "N")]
    degree: Option<usize>,
    /// Spectral interval `a,b` for cheby; estimated by Lanczos if absent.
    #[arg(long)]
    interval: Option<SpectralInterval>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "gaussian")]
    dist: Distribution,
    /// Lanczos steps when estimating the interval.
    #[arg(long, default_value_t = DEFAULT_LANCZOS_STEPS)]
    lanczos_steps: usize,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 254)]
    nx: usize,
    #[arg(long, default_value_t = 100)]
    nt: usize,
    #[arg(long, default_value_t = 2e-4)]
    diffusion: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma: f64,
    #[arg(long, default_value_t = 1e-4)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    t_final: f64,
}

impl ModelArgs {
    fn params(&self) -> HeatParams {
        HeatParams {
            nx: self.nx,
            nt: self.nt,
            diffusion: self.diffusion,
            sigma: self.sigma,
            gamma: self.gamma,
            t_final: self.t_final,
            ..HeatParams::default()
        }
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let threads = match flag {
        Some(t) => Some(t),
        None => match std::env::var("SCHATTEN_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| usage(format!("SCHATTEN_THREADS must be a positive integer, got `{v}`")))?,
            ),
            _ => None,
        },
    };
    if let Some(t) = threads {
        if t == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

/// The explicit seed, or (outside CI) a fresh one echoed to stderr.
fn resolve_seed(seed: Option<u64>) -> CliResult<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    if std::env::var_os("CI").is_some_and(|v| !v.is_empty()) {
        return Err(usage("--seed is required when CI is set"));
    }
    let s: u64 = rand::random();
    eprintln!("seed: {s}");
    Ok(s)
}

fn with_schema(mut v: Value) -> Value {
    if let Value::Object(map) = &mut v {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    v
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize")
}

fn run(cli: Cli) -> CliResult<String> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Exact { matrix, p } => {
            let m = parse_source(&matrix)?.prepare()?;
            let value = m.exact_norm(p)?;
            Ok(pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "value": value,
                "n": m.eigenvalues.len(),
                "p": p,
            })))
        }
        Command::Estimate { matrix, est } => {
            let op = parse_source(&matrix)?.operator(PosteriorSolver::LowRankUpdate)?;
            estimate(&op, &est)
        }
        Command::Bounds {
            epsilon,
            delta,
            p,
            kappa,
            variant,
        } => bounds(epsilon, delta, p, kappa, variant),
        Command::Experiment { plan, csv, json } => experiment(plan, csv, json),
        Command::Oed {
            model,
            est,
            solver,
            exact,
            export,
        } => oed(&model, &est, &solver, exact, export),
        Command::Generate { family, n, seed, out } => {
            let s = gen_synthetic(&SyntheticSpec::new(family, n, seed))?;
            save_matrix_market(&SparseSym::from_dense(&s.matrix), &out)?;
            Ok(pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "family": family.to_string(),
                "n": n,
                "seed": seed,
                "path": out,
            })))
        }
        Command::Coeffs { q, interval, degree } => {
            let model = cheby_coeffs(q, interval, degree)?;
            let mut v = model.to_json();
            v["error_bound"] = json!(model.error_bound());
            Ok(pretty(&v))
        }
    }
}

fn estimator_spec<O: LinearOperator>(op: &O, est: &EstimateArgs) -> CliResult<EstimatorSpec> {
    let seed = resolve_seed(est.seed)?;
    let mut spec = match est.method {
        Method::Mc => {
            if est.degree.is_some() || est.interval.is_some() {
                return Err(usage("--N and --interval only apply to --method cheby"));
            }
            EstimatorSpec::mc(est.p, est.samples, est.dist, seed)
        }
        Method::Cheby => {
            let degree = est.degree.ok_or_else(|| usage("--method cheby needs --N"))?;
            let cfg = ChebyConfig::new(est.p, degree, est.samples, est.dist, seed)?;
            if !cfg.is_cost_effective() {
                eprintln!(
                    "warning: N = {degree} >= p/2 = {}; the plain mc estimator needs fewer matvecs",
                    est.p / 2.0
                );
            }
            let interval = match est.interval {
                Some(iv) => iv,
                None => {
                    let n = op.dim();
                    let steps = est.lanczos_steps.min(n);
                    if steps < 2 {
                        return Err(usage("cannot estimate a spectral interval here; pass --interval"));
                    }
                    schatten::spectrum::estimate_interval(op, steps, seed)?
                }
            };
            EstimatorSpec::cheby(est.p, degree, est.samples, est.dist, seed).with_interval(interval)
        }
    };
    spec.retain_samples = false;
    Ok(spec)
}

fn estimate<O: LinearOperator>(op: &O, est: &EstimateArgs) -> CliResult<String> {
    let spec = estimator_spec(op, est)?;
    let report = estimator::run(op, &spec)?;
    let mut v = with_schema(serde_json::to_value(&report).map_err(Error::from)?);
    v["n"] = json!(op.dim());
    Ok(pretty(&v))
}

fn bounds(epsilon: f64, delta: Option<f64>, p: Option<f64>, kappa: Option<f64>, variant: Method) -> CliResult<String> {
    let mut out = json!({
        "schema_version": SCHEMA_VERSION,
        "variant": variant,
        "epsilon": epsilon,
    });
    if delta.is_none() && (p.is_none() || kappa.is_none()) {
        return Err(usage("bounds needs --delta (for M) or both --p and --kappa (for N)"));
    }
    if let Some(d) = delta {
        let m = match variant {
            Method::Mc => sample_bound(epsilon, d)?,
            Method::Cheby => cheby_sample_bound(epsilon, d)?,
        };
        out["delta"] = json!(d);
        out["M"] = json!(m);
    }
    match (p, kappa) {
        (Some(p), Some(k)) => {
            out["p"] = json!(p);
            out["kappa"] = json!(k);
            out["N"] = json!(degree_bound(epsilon, p, k)?);
        }
        (None, None) => {}
        _ => return Err(usage("--p and --kappa must be given together")),
    }
    Ok(pretty(&out))
}

fn experiment(plan_path: PathBuf, csv: Option<PathBuf>, json_out: Option<PathBuf>) -> CliResult<String> {
    let plan = ExperimentPlan::load(&plan_path)?;
    let env = match plan.method {
        Method::Mc => harness::run_envelope(&plan)?,
        Method::Cheby => harness::n_sweep(&plan)?,
    };
    let csv = csv.or(plan.csv.clone());
    let json_out = json_out.or(plan.json.clone());
    if let Some(path) = &json_out {
        env.save_json(path)?;
    }
    match &csv {
        Some(path) => {
            env.save_csv(path)?;
            Ok(pretty(&json!({
                "schema_version": SCHEMA_VERSION,
                "cells": env.cells.len(),
                "exact": env.exact,
                "csv": path,
                "json": json_out,
            })))
        }
        None => {
            let mut buf = Vec::new();
            env.write_csv(&mut buf)?;
            Ok(String::from_utf8(buf).expect("CSV output is UTF-8").trim_end().to_string())
        }
    }
}

fn oed(model: &ModelArgs, est: &EstimateArgs, solver: &str, exact: bool, export: Option<PathBuf>) -> CliResult<String> {
    let heat = HeatModel::new(model.params())?;
    let solver = match solver {
        "lowrank" | "low-rank" => PosteriorSolver::LowRankUpdate,
        "cg" => PosteriorSolver::cg_default(heat.nx()),
        other => return Err(usage(format!("unknown solver `{other}` (expected lowrank or cg)"))),
    };
    let op = PosteriorCovOp::new(&heat, solver)?;
    let spec = estimator_spec(&op, est)?;
    let report = estimator::run(&op, &spec)?;
    let mut v = with_schema(serde_json::to_value(&report).map_err(Error::from)?);
    v["n"] = json!(heat.nx());
    if exact || export.is_some() {
        let (dense, asymmetry) = op.to_dense()?;
        if let Some(path) = &export {
            schatten::matgen::save_dense_matrix_market(&dense, path)?;
            v["export"] = json!(path);
        }
        if exact {
            let value = schatten::schatten_exact(&dense, est.p)?;
            v["exact"] = json!(value);
            v["rel_err"] = json!((report.value - value).abs() / value);
            v["asymmetry"] = json!(asymmetry);
        }
    }
    Ok(pretty(&v))
}
