//! One entry point over both estimators, used by the OED driver, the
//! harness and the CLI.

use serde::{Deserialize, Serialize};

use crate::chebyshev::{cheby_schatten_estimate, ChebyConfig, SpectralInterval};
use crate::error::{Error, Result};
use crate::linops::LinearOperator;
use crate::mc_estimator::{schatten_estimate, EstimateReport, McConfig, Method};
use crate::probes::Distribution;
use crate::spectrum::estimate_interval;

/// Lanczos steps used when the Chebyshev estimator has to find its own
/// interval (capped by the dimension).
pub const DEFAULT_LANCZOS_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    pub method: Method,
    pub p: f64,
    pub samples: usize,
    /// Chebyshev degree; required for `cheby`.
    #[serde(default)]
    pub degree: Option<usize>,
    /// Spectral interval for `cheby`; estimated by Lanczos when absent.
    #[serde(default)]
    pub interval: Option<SpectralInterval>,
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_retain")]
    pub retain_samples: bool,
}

fn default_retain() -> bool {
    true
}

impl EstimatorSpec {
    pub fn mc(p: f64, samples: usize, distribution: Distribution, seed: u64) -> Self {
        Self {
            method: Method::Mc,
            p,
            samples,
            degree: None,
            interval: None,
            distribution,
            seed,
            retain_samples: true,
        }
    }

    pub fn cheby(p: f64, degree: usize, samples: usize, distribution: Distribution, seed: u64) -> Self {
        Self {
            method: Method::Cheby,
            degree: Some(degree),
            ..Self::mc(p, samples, distribution, seed)
        }
    }

    pub fn with_interval(mut self, interval: SpectralInterval) -> Self {
        self.interval = Some(interval);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Resolves the interval for a Chebyshev run: the supplied one, or a
/// Lanczos estimate seeded from `seed`.
pub fn resolve_interval<O: LinearOperator + ?Sized>(
    op: &O,
    interval: Option<SpectralInterval>,
    seed: u64,
) -> Result<SpectralInterval> {
    match interval {
        Some(iv) => Ok(iv),
        None => {
            let n = op.dim();
            if n < 2 {
                return Err(Error::param("interval", "cannot estimate a spectral interval for n < 2; pass one"));
            }
            estimate_interval(op, DEFAULT_LANCZOS_STEPS.min(n), seed)
        }
    }
}

/// Runs the estimator described by `spec` on `op`.
pub fn run<O: LinearOperator + ?Sized>(op: &O, spec: &EstimatorSpec) -> Result<EstimateReport> {
    match spec.method {
        Method::Mc => {
            let mut cfg = McConfig::new(spec.p, spec.samples, spec.distribution, spec.seed)?;
            cfg.retain_samples = spec.retain_samples;
            schatten_estimate(op, &cfg)
        }
        Method::Cheby => {
            let degree = spec
                .degree
                .ok_or_else(|| Error::param("N", "the Chebyshev estimator needs a degree"))?;
            let mut cfg = ChebyConfig::new(spec.p, degree, spec.samples, spec.distribution, spec.seed)?;
            cfg.retain_samples = spec.retain_samples;
            let interval = resolve_interval(op, spec.interval, spec.seed)?;
            cheby_schatten_estimate(op, interval, &cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseSym;

    #[test]
    fn dispatches_both_methods() {
        let a = DenseSym::diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let mc = run(&a, &EstimatorSpec::mc(2.0, 10, Distribution::Gaussian, 1)).unwrap();
        assert_eq!(mc.method, Method::Mc);
        let ch = run(&a, &EstimatorSpec::cheby(3.0, 4, 10, Distribution::Gaussian, 1)).unwrap();
        assert_eq!(ch.method, Method::Cheby);
        assert_eq!(ch.matvecs, 40);
        let iv = ch.interval.unwrap();
        assert!(iv[0] <= 1.0 && iv[1] >= 4.0);
    }

    #[test]
    fn cheby_needs_degree() {
        let a = DenseSym::identity(3);
        let mut spec = EstimatorSpec::cheby(3.0, 4, 10, Distribution::Gaussian, 1);
        spec.degree = None;
        assert!(run(&a, &spec).is_err());
    }
}
