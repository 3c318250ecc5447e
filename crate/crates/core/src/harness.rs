//! Repeated-realization experiments: relative-error statistics and
//! quantile envelopes over a grid of sample sizes (and Chebyshev degrees).
//!
//! Every realization in every cell draws its own probe substream, seeded by
//! `derive_seed(plan.seed, cell_key(cell, r))`. Cells are numbered
//! degree-major: `cell = n_index * m_grid.len() + m_index`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chebyshev::SpectralInterval;
use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorSpec};
use crate::linops::{Definiteness, DenseSym, LinearOperator, SparseSym};
use crate::matgen::{gen_synthetic, load_matrix_market, SyntheticSpec};
use crate::mc_estimator::{clip_spectrum, integer_degree, schatten_from_eigenvalues, Method};
use crate::oed_model::{HeatModel, HeatParams, PosteriorCovOp, PosteriorSolver};
use crate::probes::{cell_key, derive_seed, Distribution};
use crate::spectrum::MARGIN;

pub const SCHEMA_VERSION: u32 = 1;

/// Largest dimension for which the harness will build a dense oracle.
pub const MAX_ORACLE_DIM: usize = 5000;

pub const DEFAULT_REALIZATIONS: usize = 500;

/// Where the matrix under test comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixSource {
    Synthetic(SyntheticSpec),
    File { path: PathBuf },
    Oed(HeatParams),
    Identity { n: usize },
    Diagonal { values: Vec<f64> },
}

impl MatrixSource {
    /// Short name used in the `family` output column.
    pub fn label(&self) -> String {
        match self {
            MatrixSource::Synthetic(s) => s.family.to_string(),
            MatrixSource::File { path } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "file".into()),
            MatrixSource::Oed(_) => "oed".into(),
            MatrixSource::Identity { .. } => "identity".into(),
            MatrixSource::Diagonal { .. } => "diagonal".into(),
        }
    }

    /// Builds just the operator, without any dense factorization. OED
    /// sources use the requested posterior solver.
    pub fn operator(&self, solver: PosteriorSolver) -> Result<PreparedOp> {
        Ok(match self {
            MatrixSource::File { path } => PreparedOp::Sparse(load_matrix_market(path)?),
            MatrixSource::Oed(params) => {
                let model = HeatModel::new(params.clone())?;
                PreparedOp::Posterior(Box::new(PosteriorCovOp::new(&model, solver)?))
            }
            MatrixSource::Synthetic(spec) => PreparedOp::Dense(gen_synthetic(spec)?.matrix),
            MatrixSource::Identity { .. } | MatrixSource::Diagonal { .. } => self.prepare()?.op,
        })
    }

    /// Builds the operator together with its dense-oracle spectrum.
    pub fn prepare(&self) -> Result<PreparedMatrix> {
        let label = self.label();
        let (op, eigenvalues) = match self {
            MatrixSource::Synthetic(spec) => {
                let s = gen_synthetic(spec)?;
                (PreparedOp::Dense(s.matrix), s.eigenvalues)
            }
            MatrixSource::File { path } => {
                let a = load_matrix_market(path)?;
                check_oracle_dim(a.n())?;
                let ev = a.to_dense().eigenvalues();
                (PreparedOp::Sparse(a), ev)
            }
            MatrixSource::Oed(params) => {
                let model = HeatModel::new(params.clone())?;
                check_oracle_dim(model.nx())?;
                let op = PosteriorCovOp::new(&model, PosteriorSolver::LowRankUpdate)?;
                let (dense, _) = op.to_dense()?;
                (PreparedOp::Posterior(Box::new(op)), dense.eigenvalues())
            }
            MatrixSource::Identity { n } => {
                if *n == 0 {
                    return Err(Error::param("n", "identity dimension must be positive"));
                }
                (PreparedOp::Dense(DenseSym::identity(*n)), vec![1.0; *n])
            }
            MatrixSource::Diagonal { values } => {
                if values.is_empty() {
                    return Err(Error::param("values", "diagonal must be nonempty"));
                }
                (PreparedOp::Dense(DenseSym::diagonal(values)), values.clone())
            }
        };
        let mut eigenvalues = clip_spectrum(&eigenvalues)?;
        eigenvalues.sort_by(f64::total_cmp);
        Ok(PreparedMatrix { label, op, eigenvalues })
    }
}

fn check_oracle_dim(n: usize) -> Result<()> {
    if n > MAX_ORACLE_DIM {
        return Err(Error::param(
            "matrix",
            format!("n = {n} exceeds the dense-oracle limit of {MAX_ORACLE_DIM}"),
        ));
    }
    Ok(())
}

/// The concrete operator behind a [`PreparedMatrix`].
#[derive(Debug, Clone)]
pub enum PreparedOp {
    Dense(DenseSym),
    Sparse(SparseSym),
    Posterior(Box<PosteriorCovOp>),
}

impl LinearOperator for PreparedOp {
    fn dim(&self) -> usize {
        match self {
            PreparedOp::Dense(a) => a.dim(),
            PreparedOp::Sparse(a) => a.dim(),
            PreparedOp::Posterior(a) => a.dim(),
        }
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        match self {
            PreparedOp::Dense(a) => a.apply_into(x, y),
            PreparedOp::Sparse(a) => a.apply_into(x, y),
            PreparedOp::Posterior(a) => a.apply_into(x, y),
        }
    }

    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        match self {
            PreparedOp::Dense(a) => a.apply_block_into(x, y, k),
            PreparedOp::Sparse(a) => a.apply_block_into(x, y, k),
            PreparedOp::Posterior(a) => a.apply_block_into(x, y, k),
        }
    }

    fn definiteness(&self) -> Definiteness {
        match self {
            PreparedOp::Dense(a) => a.definiteness(),
            PreparedOp::Sparse(a) => a.definiteness(),
            PreparedOp::Posterior(a) => a.definiteness(),
        }
    }
}

/// An operator with its exact (clipped, ascending) spectrum.
#[derive(Debug, Clone)]
pub struct PreparedMatrix {
    pub label: String,
    pub op: PreparedOp,
    pub eigenvalues: Vec<f64>,
}

impl PreparedMatrix {
    pub fn exact_norm(&self, p: f64) -> Result<f64> {
        schatten_from_eigenvalues(&self.eigenvalues, p)
    }

    /// `[lambda_min, lambda_max]` from the oracle, widened by the Lanczos
    /// margin when the spectrum is a single point.
    pub fn oracle_interval(&self) -> Result<SpectralInterval> {
        let lo = self.eigenvalues[0];
        let hi = self.eigenvalues[self.eigenvalues.len() - 1];
        if lo == hi {
            SpectralInterval::new(lo * (1.0 - MARGIN), hi * (1.0 + MARGIN))
        } else {
            SpectralInterval::new(lo, hi)
        }
    }
}

fn default_realizations() -> usize {
    DEFAULT_REALIZATIONS
}

/// One experiment: a matrix, an estimator, and the grids to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub matrix: MatrixSource,
    pub p: f64,
    pub method: Method,
    #[serde(rename = "M_grid", alias = "m_grid")]
    pub m_grid: Vec<usize>,
    #[serde(rename = "N_grid", alias = "n_grid", default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub distribution: Distribution,
    /// Chebyshev interval; the oracle's extreme eigenvalues when absent.
    #[serde(default)]
    pub interval: Option<SpectralInterval>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

fn strictly_increasing(name: &str, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Plan(format!("{name} must be nonempty")));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Plan(format!("{name} must be strictly increasing, got {grid:?}")));
    }
    Ok(())
}

impl ExperimentPlan {
    pub fn new(matrix: MatrixSource, p: f64, method: Method, m_grid: Vec<usize>) -> Self {
        Self {
            matrix,
            p,
            method,
            m_grid,
            n_grid: Vec::new(),
            realizations: DEFAULT_REALIZATIONS,
            seed: 0,
            distribution: Distribution::Gaussian,
            interval: None,
            csv: None,
            json: None,
        }
    }

    pub fn with_degrees(mut self, n_grid: Vec<usize>) -> Self {
        self.n_grid = n_grid;
        self
    }

    pub fn with_realizations(mut self, r: usize) -> Self {
        self.realizations = r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_distribution(mut self, d: Distribution) -> Self {
        self.distribution = d;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text).map_err(|e| Error::Plan(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::Plan(format!("p must be a finite number >= 1, got {}", self.p)));
        }
        strictly_increasing("M_grid", &self.m_grid)?;
        if self.m_grid[0] == 0 {
            return Err(Error::Plan("M_grid entries must be positive".into()));
        }
        if self.realizations < 2 {
            return Err(Error::Plan(format!("realizations must be at least 2, got {}", self.realizations)));
        }
        match self.method {
            Method::Mc => {
                if !self.n_grid.is_empty() {
                    return Err(Error::Plan("N_grid is only meaningful for the cheby method".into()));
                }
                integer_degree(self.p)?;
            }
            Method::Cheby => {
                strictly_increasing("N_grid", &self.n_grid)?;
                if self.n_grid[0] == 0 {
                    return Err(Error::Plan("N_grid entries must be positive".into()));
                }
            }
        }
        u32::try_from(self.m_grid.len() * self.n_grid.len().max(1))
            .ok()
            .zip(u32::try_from(self.realizations).ok())
            .ok_or_else(|| Error::Plan("grid or realization count too large".into()))?;
        Ok(())
    }

    fn degrees(&self) -> Vec<Option<usize>> {
        match self.method {
            Method::Mc => vec![None],
            Method::Cheby => self.n_grid.iter().copied().map(Some).collect(),
        }
    }
}

/// Statistics for one `(M, N)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCell {
    pub family: String,
    pub p: f64,
    pub method: Method,
    #[serde(rename = "M")]
    pub samples: usize,
    #[serde(rename = "N")]
    pub degree: Option<usize>,
    pub mean_rel_err: f64,
    pub q025: f64,
    pub q975: f64,
    /// Mean operator applications per realization.
    pub matvecs: f64,
    pub seconds: f64,
    /// Set by [`n_sweep`]: whether this degree's error fails to halve from the
    /// smallest to the largest `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau: Option<bool>,
    /// Per-realization relative errors, in realization order.
    #[serde(skip)]
    pub rel_errors: Vec<f64>,
    /// Per-realization estimates, in realization order.
    #[serde(skip)]
    pub estimates: Vec<f64>,
}

impl EnvelopeCell {
    /// Everything except wall time, for determinism checks.
    pub fn same_statistics(&self, other: &Self) -> bool {
        Self {
            seconds: 0.0,
            ..self.clone()
        } == Self {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema_version: u32,
    pub family: String,
    pub p: f64,
    pub method: Method,
    pub distribution: Distribution,
    pub realizations: usize,
    pub seed: u64,
    pub exact: f64,
    pub interval: Option<[f64; 2]>,
    pub cells: Vec<EnvelopeCell>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    family: &'a str,
    p: f64,
    method: Method,
    #[serde(rename = "M")]
    samples: usize,
    #[serde(rename = "N")]
    degree: Option<usize>,
    mean_rel_err: f64,
    q025: f64,
    q975: f64,
    matvecs: f64,
    seconds: f64,
}

impl Envelope {
    pub fn cell(&self, samples: usize, degree: Option<usize>) -> Option<&EnvelopeCell> {
        self.cells.iter().find(|c| c.samples == samples && c.degree == degree)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cells {
            w.serialize(CsvRow {
                family: &c.family,
                p: c.p,
                method: c.method,
                samples: c.samples,
                degree: c.degree,
                mean_rel_err: c.mean_rel_err,
                q025: c.q025,
                q975: c.q975,
                matvecs: c.matvecs,
                seconds: c.seconds,
            })?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("envelope serializes")
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Equal up to wall-clock timings.
    pub fn same_statistics(&self, other: &Self) -> bool {
        self.family == other.family
            && self.p == other.p
            && self.exact == other.exact
            && self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| a.same_statistics(b))
    }
}

/// Nearest-rank quantile of an ascending sample: the element at 1-based
/// rank `ceil(level R)`, with level 0 giving the minimum.
pub fn quantile(sorted: &[f64], level: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::param("level", format!("quantile level must lie in [0, 1], got {level}")));
    }
    let r = sorted.len();
    // level * R is computed inexactly (0.975 * 1000 is not exactly 975)
    let scaled = level * r as f64;
    let rank = if (scaled - scaled.round()).abs() <= 1e-9 * scaled.max(1.0) {
        scaled.round()
    } else {
        scaled.ceil()
    } as usize;
    Ok(sorted[rank.clamp(1, r) - 1])
}

/// Runs the plan on a freshly prepared matrix.
pub fn run_envelope(plan: &ExperimentPlan) -> Result<Envelope> {
    plan.validate()?;
    let matrix = plan.matrix.prepare()?;
    run_envelope_on(plan, &matrix)
}

/// Runs the plan against an already prepared matrix (the plan's `matrix`
/// field is used only for validation).
pub fn run_envelope_on(plan: &ExperimentPlan, matrix: &PreparedMatrix) -> Result<Envelope> {
    plan.validate()?;
    let exact = matrix.exact_norm(plan.p)?;
    if exact == 0.0 {
        return Err(Error::param("matrix", "relative error is undefined for the zero matrix"));
    }
    let interval = match plan.method {
        Method::Mc => None,
        Method::Cheby => Some(match plan.interval {
            Some(iv) => iv,
            None => matrix.oracle_interval()?,
        }),
    };

    let degrees = plan.degrees();
    let mut cells = Vec::with_capacity(degrees.len() * plan.m_grid.len());
    for (ni, &degree) in degrees.iter().enumerate() {
        for (mi, &m) in plan.m_grid.iter().enumerate() {
            let cell = (ni * plan.m_grid.len() + mi) as u32;
            let started = Instant::now();
            let runs: Vec<(f64, u64)> = (0..plan.realizations as u32)
                .into_par_iter()
                .map(|r| {
                    let seed = derive_seed(plan.seed, cell_key(cell, r));
                    let spec = EstimatorSpec {
                        method: plan.method,
                        p: plan.p,
                        samples: m,
                        degree,
                        interval,
                        distribution: plan.distribution,
                        seed,
                        retain_samples: false,
                    };
                    let report = estimator::run(&matrix.op, &spec)?;
                    Ok((report.value, report.matvecs))
                })
                .collect::<Result<_>>()?;
            let seconds = started.elapsed().as_secs_f64();

            let estimates: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let rel_errors: Vec<f64> = estimates.iter().map(|v| (v - exact).abs() / exact).collect();
            let r = plan.realizations as f64;
            let mut sorted = rel_errors.clone();
            sorted.sort_by(f64::total_cmp);
            cells.push(EnvelopeCell {
                family: matrix.label.clone(),
                p: plan.p,
                method: plan.method,
                samples: m,
                degree,
                mean_rel_err: rel_errors.iter().sum::<f64>() / r,
                q025: quantile(&sorted, 0.025)?,
                q975: quantile(&sorted, 0.975)?,
                matvecs: runs.iter().map(|r| r.1 as f64).sum::<f64>() / r,
                seconds,
                plateau: None,
                rel_errors,
                estimates,
            });
        }
    }

    Ok(Envelope {
        schema_version: SCHEMA_VERSION,
        family: matrix.label.clone(),
        p: plan.p,
        method: plan.method,
        distribution: plan.distribution,
        realizations: plan.realizations,
        seed: plan.seed,
        exact,
        interval: interval.map(|iv| [iv.a(), iv.b()]),
        cells,
    })
}

/// Chebyshev envelope over `(M, N)` with plateau flags: a degree plateaus
/// when its largest-`M` error is at least half its smallest-`M` error.
pub fn n_sweep(plan: &ExperimentPlan) -> Result<Envelope> {
    if plan.method != Method::Cheby {
        return Err(Error::Plan("an N sweep needs the cheby method".into()));
    }
    let mut env = run_envelope(plan)?;
    flag_plateaus(&mut env);
    Ok(env)
}

/// Sets `plateau` on every cell of a Chebyshev envelope (needs two or more
/// sample sizes).
pub fn flag_plateaus(env: &mut Envelope) {
    let mut degrees: Vec<Option<usize>> = env.cells.iter().map(|c| c.degree).collect();
    degrees.dedup();
    for d in degrees {
        let column: Vec<usize> = (0..env.cells.len()).filter(|&i| env.cells[i].degree == d).collect();
        if column.len() < 2 {
            continue;
        }
        let first = env.cells[column[0]].mean_rel_err;
        let last = env.cells[*column.last().unwrap()].mean_rel_err;
        let flag = last >= 0.5 * first;
        for i in column {
            env.cells[i].plateau = Some(flag);
        }
    }
}
