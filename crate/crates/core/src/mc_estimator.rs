//! Plain Monte Carlo estimation of Schatten p-norms for integer `p`.
//!
//! For probes `w_j` with mean zero and identity covariance,
//! `E[w^T A^p w] = tr(A^p) = ||A||_p^p` when `A` is SPSD. The estimator
//! averages `M` such quadratic forms and takes the `p`-th root. Symmetry
//! halves the cost: with `K = floor(p/2)` and `y = A^K w`, the form is
//! `y^T y` for even `p` and `y^T A y` for odd `p`, i.e. `ceil(p/2)` matvecs
//! per probe.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{check_len, dot, DenseSym, LinearOperator};
use crate::probes::{Distribution, ProbeStream};
use crate::sampling::{run_samples, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mc,
    Cheby,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mc => "mc",
            Method::Cheby => "cheby",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Method::Mc),
            "cheby" => Ok(Method::Cheby),
            other => Err(Error::param("method", format!("unknown method `{other}` (expected mc or cheby)"))),
        }
    }
}

/// Output of a Monte Carlo Schatten-norm estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    /// The estimate of `||A||_p`.
    pub value: f64,
    /// The inner sample mean, an unbiased estimate of `||A||_p^p`
    /// (of `tr(phi_N(A))` for the Chebyshev estimator).
    pub p_power_mean: f64,
    pub p: f64,
    pub method: Method,
    #[serde(rename = "M")]
    pub samples_used: usize,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none", default)]
    pub degree: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interval: Option<[f64; 2]>,
    pub matvecs: u64,
    pub seed: u64,
    pub distribution: Distribution,
    #[serde(rename = "elapsed_s")]
    pub elapsed: f64,
    /// Per-probe quadratic forms, in sample order. Empty in streaming mode.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub samples: Vec<f64>,
}

/// Parameters of the plain estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub p: u32,
    pub samples: usize,
    pub distribution: Distribution,
    pub seed: u64,
    /// Keep the per-sample quadratic forms in the report.
    pub retain_samples: bool,
}

impl McConfig {
    /// Validates `p` (a positive integer) and `M >= 1`.
    pub fn new(p: f64, samples: usize, distribution: Distribution, seed: u64) -> Result<Self> {
        let p = integer_degree(p)?;
        if samples == 0 {
            return Err(Error::param("M", "sample count must be at least 1"));
        }
        Ok(Self {
            p,
            samples,
            distribution,
            seed,
            retain_samples: true,
        })
    }

    pub fn streaming(mut self) -> Self {
        self.retain_samples = false;
        self
    }

    /// Matvecs spent per probe: `ceil(p/2)`.
    pub fn matvecs_per_sample(&self) -> u64 {
        u64::from(self.p.div_ceil(2))
    }
}

/// Accepts `p` only if it is a positive integer.
pub fn integer_degree(p: f64) -> Result<u32> {
    if !(p.is_finite() && p >= 1.0 && p.fract() == 0.0 && p <= f64::from(u32::MAX)) {
        return Err(Error::NonIntegerDegree(p));
    }
    Ok(p as u32)
}

/// Hutchinson trace estimate `(1/M) sum_j w_j^T A w_j`.
pub fn trace_estimate<O: LinearOperator + ?Sized>(op: &O, samples: usize, stream: &ProbeStream) -> Result<EstimateReport> {
    check_len(op.dim(), stream.dim())?;
    let cfg = McConfig::new(1.0, samples, stream.distribution(), stream.seed())?;
    schatten_estimate(op, &cfg)
}

/// Monte Carlo estimate of `||A||_p` for integer `p`.
pub fn schatten_estimate<O: LinearOperator + ?Sized>(op: &O, cfg: &McConfig) -> Result<EstimateReport> {
    if cfg.p == 0 {
        return Err(Error::NonIntegerDegree(0.0));
    }
    if cfg.samples == 0 {
        return Err(Error::param("M", "sample count must be at least 1"));
    }
    let started = Instant::now();
    let n = op.dim();
    let stream = ProbeStream::new(cfg.distribution, cfg.seed, n);
    let half = (cfg.p / 2) as usize;
    let odd = cfg.p % 2 == 1;

    let summary = run_samples(cfg.samples, cfg.retain_samples, |range, out| {
        let k = (range.end - range.start) as usize;
        let mut y = vec![0.0; n * k];
        let mut scratch = vec![0.0; n * k];
        for (col, j) in range.clone().enumerate() {
            stream.probe_into(j, &mut y[col * n..(col + 1) * n]);
        }
        let mut matvecs = 0u64;
        for _ in 0..half {
            op.apply_block_into(&y, &mut scratch, k)?;
            std::mem::swap(&mut y, &mut scratch);
            matvecs += k as u64;
        }
        if odd {
            op.apply_block_into(&y, &mut scratch, k)?;
            matvecs += k as u64;
            for c in 0..k {
                out.push(dot(&y[c * n..(c + 1) * n], &scratch[c * n..(c + 1) * n]));
            }
        } else {
            for c in 0..k {
                let yc = &y[c * n..(c + 1) * n];
                out.push(dot(yc, yc));
            }
        }
        debug_assert!(k <= CHUNK);
        Ok(matvecs)
    })?;

    if summary.mean < 0.0 || !summary.mean.is_finite() {
        return Err(Error::NegativeMean(summary.mean));
    }
    let p = f64::from(cfg.p);
    Ok(EstimateReport {
        value: summary.mean.powf(1.0 / p),
        p_power_mean: summary.mean,
        p,
        method: Method::Mc,
        samples_used: cfg.samples,
        degree: None,
        interval: None,
        matvecs: summary.matvecs,
        seed: cfg.seed,
        distribution: cfg.distribution,
        elapsed: started.elapsed().as_secs_f64(),
        samples: summary.samples,
    })
}

/// Relative threshold below which negative eigenvalues are treated as
/// roundoff and clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Clips roundoff-negative eigenvalues, rejecting genuinely negative ones.
pub fn clip_spectrum(eigenvalues: &[f64]) -> Result<Vec<f64>> {
    let scale = eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let threshold = -PSD_TOLERANCE * scale;
    eigenvalues
        .iter()
        .map(|&l| {
            if l < threshold || l.is_nan() {
                Err(Error::NotPositiveSemidefinite { eigenvalue: l, threshold })
            } else {
                Ok(l.max(0.0))
            }
        })
        .collect()
}

/// `(lambda_max, sum_j (lambda_j / lambda_max)^p)`; the scaling keeps large
/// powers representable.
pub(crate) fn scaled_power_sum(eigenvalues: &[f64], p: f64) -> (f64, f64) {
    let top = eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
    if top == 0.0 {
        return (0.0, 0.0);
    }
    (top, eigenvalues.iter().map(|l| (l / top).powf(p)).sum())
}

/// `||A||_p = (sum lambda_j^p)^(1/p)` from a (clipped) nonnegative spectrum.
pub fn schatten_from_eigenvalues(eigenvalues: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("Schatten degree must be >= 1, got {p}")));
    }
    let ev = clip_spectrum(eigenvalues)?;
    let (top, s) = scaled_power_sum(&ev, p);
    Ok(top * s.powf(1.0 / p))
}

/// Exact `||A||_p` via a dense symmetric eigendecomposition.
pub fn schatten_exact(a: &DenseSym, p: f64) -> Result<f64> {
    schatten_from_eigenvalues(&a.eigenvalues(), p)
}

/// Rounds `x` up, treating values within `1e-9` relative of an integer as
/// that integer so closed-form bounds are not pushed up by roundoff.
pub(crate) fn ceil_tolerant(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

fn check_epsilon_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("delta", format!("must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Samples sufficient for the plain estimator to be an `(epsilon, delta)`
/// estimator with Gaussian probes: `ceil(8 epsilon^-2 ln(2/delta))`.
pub fn sample_bound(epsilon: f64, delta: f64) -> Result<u64> {
    check_epsilon_delta(epsilon, delta)?;
    Ok(ceil_tolerant(8.0 / (epsilon * epsilon) * (2.0 / delta).ln()) as u64)
}

/// Samples sufficient for the Chebyshev estimator (given a degree from
/// [`crate::chebyshev::degree_bound`]): `ceil(72 epsilon^-2 ln(2/delta))`.
pub fn cheby_sample_bound(epsilon: f64, delta: f64) -> Result<u64> {
    check_epsilon_delta(epsilon, delta)?;
    Ok(ceil_tolerant(72.0 / (epsilon * epsilon) * (2.0 / delta).ln()) as u64)
}

/// Upper bound on `Var(X_M)`: `2 ||A^p||_F^2 / (M ||A||_p^(2p-2))`.
pub fn variance_bound(a: &DenseSym, p: f64, samples: usize) -> Result<f64> {
    variance_bound_from_eigenvalues(&a.eigenvalues(), p, samples)
}

pub fn variance_bound_from_eigenvalues(eigenvalues: &[f64], p: f64, samples: usize) -> Result<f64> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("Schatten degree must be >= 1, got {p}")));
    }
    if samples == 0 {
        return Err(Error::param("M", "sample count must be at least 1"));
    }
    let ev = clip_spectrum(eigenvalues)?;
    let (top, s1) = scaled_power_sum(&ev, p);
    if top == 0.0 {
        return Err(Error::param("A", "variance bound is undefined for the zero matrix"));
    }
    let (_, s2) = scaled_power_sum(&ev, 2.0 * p);
    Ok(2.0 * top * top * s2 / (samples as f64 * s1.powf((2.0 * p - 2.0) / p)))
}

/// `Var(w^T B w) = 2 ||B||_F^2` for Gaussian `w`; with `B = A^p`, averaged
/// over `M` probes. Used as the reference variance of `X_M^p`.
pub fn pth_power_variance(eigenvalues: &[f64], p: f64, samples: usize) -> Result<f64> {
    let ev = clip_spectrum(eigenvalues)?;
    Ok(2.0 * ev.iter().map(|l| l.powf(2.0 * p)).sum::<f64>() / samples as f64)
}
