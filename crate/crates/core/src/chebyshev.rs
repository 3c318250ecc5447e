//! Chebyshev acceleration for real Schatten degrees.
//!
//! `g(x) = x^q` with `q = p/2` is interpolated at the `N + 1` Chebyshev
//! extreme points of `[a, b]`, giving `psi_N`. Then `phi_N(A) = psi_N(A)^2`
//! is SPSD by construction and `tr(phi_N(A)) ~ ||A||_p^p`; the estimator
//! averages `||psi_N(A) w_j||^2`, costing `N` matvecs per probe regardless
//! of `p`.

use std::time::Instant;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linops::{dot, LinearOperator};
use crate::mc_estimator::{EstimateReport, Method};
use crate::probes::{Distribution, ProbeStream};
use crate::sampling::run_samples;

/// `[a, b]` with `0 < a <= b`, assumed to enclose the spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralInterval {
    a: f64,
    b: f64,
}

impl SpectralInterval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidInterval { a, b, reason: "endpoints must be finite" });
        }
        if a <= 0.0 {
            return Err(Error::InvalidInterval { a, b, reason: "lower endpoint must be positive" });
        }
        if b < a {
            return Err(Error::InvalidInterval { a, b, reason: "upper endpoint is below the lower one" });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// `sqrt(b / a)`.
    pub fn kappa(&self) -> f64 {
        (self.b / self.a).sqrt()
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.a..=self.b).contains(&x)
    }

    fn is_degenerate(&self) -> bool {
        self.a == self.b
    }

    /// Affine map of `[a, b]` onto `[-1, 1]`.
    fn to_reference(self, x: f64) -> f64 {
        (2.0 * x - (self.b + self.a)) / (self.b - self.a)
    }
}

impl std::str::FromStr for SpectralInterval {
    type Err = Error;

    /// Parses `"a,b"`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(',')
            .ok_or_else(|| Error::param("interval", format!("expected `a,b`, got `{s}`")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::param("interval", format!("`{v}` is not a number")))
        };
        Self::new(parse(a)?, parse(b)?)
    }
}

/// Degree-`N` Chebyshev interpolant of `x^q` on an interval.
///
/// `coeffs[0]` is stored already halved, so the model is
/// `sum_j coeffs[j] T_j(t)` with `t` the mapped variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevModel {
    pub degree: usize,
    pub interval: SpectralInterval,
    pub exponent: f64,
    pub coeffs: Vec<f64>,
}

/// Interpolates `x^q` on `interval` at the `N + 1` Chebyshev extreme
/// points (a DCT-I computed through a length-`2N` FFT).
///
/// For `N = 0` the constant is the value at the midpoint; on a degenerate
/// interval `a = b` the model is the exact constant `a^q`.
pub fn cheby_coeffs(q: f64, interval: SpectralInterval, degree: usize) -> Result<ChebyshevModel> {
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::param("q", format!("exponent must be positive, got {q}")));
    }
    let (a, b) = (interval.a, interval.b);
    let mut coeffs = vec![0.0; degree + 1];
    if interval.is_degenerate() {
        coeffs[0] = a.powf(q);
    } else if degree == 0 {
        coeffs[0] = (0.5 * (a + b)).powf(q);
    } else {
        let n = degree;
        let half_width = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        let g = |k: usize| (mid + half_width * (std::f64::consts::PI * k as f64 / n as f64).cos()).powf(q);
        // Even extension: v_k = g_k for k <= N, v_{2N-k} = g_k.
        let mut buf: Vec<Complex<f64>> = (0..2 * n)
            .map(|k| Complex::new(if k <= n { g(k) } else { g(2 * n - k) }, 0.0))
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        fft.process(&mut buf);
        for (c, v) in coeffs.iter_mut().zip(&buf) {
            *c = v.re / n as f64;
        }
        coeffs[0] *= 0.5;
        coeffs[n] *= 0.5;
    }
    Ok(ChebyshevModel {
        degree,
        interval,
        exponent: q,
        coeffs,
    })
}

impl ChebyshevModel {
    /// `psi_N(x)` by Clenshaw's recurrence on the mapped variable.
    pub fn eval(&self, x: f64) -> f64 {
        if self.interval.is_degenerate() {
            return self.coeffs[0];
        }
        let t = self.interval.to_reference(x);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * t * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        t * b1 - b2 + self.coeffs[0]
    }

    /// `psi_N(x)` plus whether `x` lies inside the interval, where the
    /// uniform error bound holds.
    pub fn eval_flagged(&self, x: f64) -> (f64, bool) {
        (self.eval(x), self.interval.contains(x))
    }

    /// `tr(phi_N(A)) = sum_j psi_N(lambda_j)^2` for a known spectrum.
    pub fn trace_phi(&self, eigenvalues: &[f64]) -> f64 {
        eigenvalues.iter().map(|&l| self.eval(l).powi(2)).sum()
    }

    /// [`trefethen_bound`] for this model.
    pub fn error_bound(&self) -> f64 {
        trefethen_bound(self.exponent, self.interval, self.degree)
    }

    /// Coefficients as a JSON document; `c0` is already halved.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "convention": "psi(x) = sum_j coeffs[j] * T_j(t), t = (2x - (a+b)) / (b-a); coeffs[0] already halved",
            "q": self.exponent,
            "N": self.degree,
            "interval": [self.interval.a, self.interval.b],
            "coeffs": self.coeffs,
        })
    }
}

/// Uniform bound on `|x^q - psi_N(x)|` over `[a, b]`:
/// `4 U / ((rho - 1) rho^N)` with `kappa = sqrt(b/a)`,
/// `rho = (kappa + 1) / (kappa - 1)` and `U = (b + a)^q`.
///
/// Evaluated in log space. Returns `0` on a degenerate interval.
pub fn trefethen_bound(q: f64, interval: SpectralInterval, degree: usize) -> f64 {
    if interval.is_degenerate() {
        return 0.0;
    }
    let kappa = interval.kappa();
    let rho = (kappa + 1.0) / (kappa - 1.0);
    let log = 4f64.ln() + q * (interval.b + interval.a).ln() - (rho - 1.0).ln() - degree as f64 * rho.ln();
    log.exp()
}

/// Smallest degree `N` for which `|tr(phi_N(A)) - ||A||_p^p| <= (eps/2) ||A||_p^p`
/// is guaranteed when the spectrum lies in `[a, b]` with `kappa = sqrt(b/a)`.
///
/// Natural logarithms throughout (the bound is a ratio of logs).
pub fn degree_bound(epsilon: f64, p: f64, kappa: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::param("epsilon", format!("must lie in (0, 1], got {epsilon}")));
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::param("p", format!("must be >= 1, got {p}")));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::param("kappa", format!("must be >= 1, got {kappa}")));
    }
    if kappa == 1.0 {
        return Ok(0);
    }
    let q = p / 2.0;
    // ln(kappa^p + sqrt(eps/2 + kappa^2p)) without forming kappa^p.
    let lk = kappa.ln();
    let tail = p * lk + (1.0 + (0.5 * epsilon * (-2.0 * p * lk).exp() + 1.0).sqrt()).ln();
    let numerator = (4.0 / epsilon).ln() + q * (kappa * kappa + 1.0).ln() + (kappa - 1.0).ln() + tail;
    let denominator = ((kappa + 1.0) / (kappa - 1.0)).ln();
    Ok(crate::mc_estimator::ceil_tolerant(numerator / denominator).max(0.0) as usize)
}

/// Parameters of the Chebyshev estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChebyConfig {
    pub p: f64,
    pub degree: usize,
    pub samples: usize,
    pub distribution: Distribution,
    pub seed: u64,
    pub retain_samples: bool,
}

impl ChebyConfig {
    pub fn new(p: f64, degree: usize, samples: usize, distribution: Distribution, seed: u64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::param("p", format!("Schatten degree must be >= 1, got {p}")));
        }
        if degree == 0 {
            return Err(Error::param("N", "Chebyshev degree must be at least 1"));
        }
        if samples == 0 {
            return Err(Error::param("M", "sample count must be at least 1"));
        }
        Ok(Self {
            p,
            degree,
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

    /// The estimator only saves work over the plain one when `N < p/2`.
    pub fn is_cost_effective(&self) -> bool {
        (self.degree as f64) < self.p / 2.0
    }
}

/// Chebyshev-accelerated estimate of `||A||_p` for real `p >= 1`.
///
/// `A` must be SPD with spectrum inside `interval` (`a < b`). Each probe
/// runs the mapped three-term recurrence `y_{k+1} = (4/(b-a)) A y_k -
/// (2(b+a)/(b-a)) y_k - y_{k-1}`, accumulating `z = sum_k c_k y_k`, and
/// contributes `z^T z`.
pub fn cheby_schatten_estimate<O: LinearOperator + ?Sized>(
    op: &O,
    interval: SpectralInterval,
    cfg: &ChebyConfig,
) -> Result<EstimateReport> {
    let cfg = ChebyConfig::new(cfg.p, cfg.degree, cfg.samples, cfg.distribution, cfg.seed)
        .map(|c| ChebyConfig { retain_samples: cfg.retain_samples, ..c })?;
    if interval.is_degenerate() {
        return Err(Error::InvalidInterval {
            a: interval.a,
            b: interval.b,
            reason: "the recurrence needs a < b; widen the interval",
        });
    }
    let started = Instant::now();
    let model = cheby_coeffs(cfg.p / 2.0, interval, cfg.degree)?;
    let c = &model.coeffs;
    let n = op.dim();
    let stream = ProbeStream::new(cfg.distribution, cfg.seed, n);
    let (a, b) = (interval.a, interval.b);
    let scale = 2.0 / (b - a);
    let shift = (b + a) / (b - a);

    let summary = run_samples(cfg.samples, cfg.retain_samples, |range, out| {
        let k = (range.end - range.start) as usize;
        let len = n * k;
        let mut prev = vec![0.0; len];
        for (col, j) in range.clone().enumerate() {
            stream.probe_into(j, &mut prev[col * n..(col + 1) * n]);
        }
        let mut cur = vec![0.0; len];
        let mut next = vec![0.0; len];
        op.apply_block_into(&prev, &mut cur, k)?;
        let mut z = vec![0.0; len];
        for i in 0..len {
            cur[i] = scale * cur[i] - shift * prev[i];
            z[i] = c[0] * prev[i] + c[1] * cur[i];
        }
        for &ck in &c[2..] {
            op.apply_block_into(&cur, &mut next, k)?;
            for i in 0..len {
                next[i] = 2.0 * scale * next[i] - 2.0 * shift * cur[i] - prev[i];
                z[i] += ck * next[i];
            }
            // rotate (prev, cur, next) <- (cur, next, prev)
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        for col in 0..k {
            let zc = &z[col * n..(col + 1) * n];
            out.push(dot(zc, zc));
        }
        Ok((cfg.degree * k) as u64)
    })?;

    if summary.mean < 0.0 || !summary.mean.is_finite() || summary.min_sample < 0.0 {
        return Err(Error::SpectrumViolation(summary.mean));
    }
    Ok(EstimateReport {
        value: summary.mean.powf(1.0 / cfg.p),
        p_power_mean: summary.mean,
        p: cfg.p,
        method: Method::Cheby,
        samples_used: cfg.samples,
        degree: Some(cfg.degree),
        interval: Some([a, b]),
        matvecs: summary.matvecs,
        seed: cfg.seed,
        distribution: cfg.distribution,
        elapsed: started.elapsed().as_secs_f64(),
        samples: summary.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::{Counted, DenseSym};
    use crate::mc_estimator::{schatten_estimate, McConfig};

    fn iv(a: f64, b: f64) -> SpectralInterval {
        SpectralInterval::new(a, b).unwrap()
    }

    fn grid_max_error(model: &ChebyshevModel, points: usize) -> f64 {
        let (a, b) = (model.interval.a(), model.interval.b());
        (0..points)
            .map(|i| {
                let x = a + (b - a) * i as f64 / (points - 1) as f64;
                (x.powf(model.exponent) - model.eval(x)).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn linear_function_coefficients() {
        let m = cheby_coeffs(1.0, iv(1.0, 3.0), 6).unwrap();
        assert!((m.coeffs[0] - 2.0).abs() < 1e-13);
        assert!((m.coeffs[1] - 1.0).abs() < 1e-13);
        assert!(m.coeffs[2..].iter().all(|c| c.abs() < 1e-13));
        assert!((m.eval(2.5) - 2.5).abs() < 1e-13);
    }

    #[test]
    fn quadratic_reproduced_exactly() {
        for n in [2, 3, 7] {
            let m = cheby_coeffs(2.0, iv(1.0, 3.0), n).unwrap();
            for i in 0..50 {
                let x = 1.0 + 2.0 * i as f64 / 49.0;
                assert!((m.eval(x) - x * x).abs() <= 1e-12 * x * x);
            }
        }
    }

    #[test]
    fn invalid_intervals() {
        assert!(SpectralInterval::new(0.0, 1.0).is_err());
        assert!(SpectralInterval::new(-1.0, 1.0).is_err());
        assert!(SpectralInterval::new(2.0, 1.0).is_err());
        assert!("0.5,2".parse::<SpectralInterval>().is_ok());
        assert!("0.5;2".parse::<SpectralInterval>().is_err());
    }

    #[test]
    fn bound_closed_form() {
        // kappa = 2, rho = 3, U = 5: 4 * 5 / 2 = 10.
        assert!((trefethen_bound(1.0, iv(1.0, 4.0), 0) - 10.0).abs() < 1e-12);
        assert_eq!(trefethen_bound(3.0, iv(2.0, 2.0), 5), 0.0);
    }

    #[test]
    fn bound_holds_for_linear_and_quintic() {
        let m = cheby_coeffs(1.0, iv(1.0, 3.0), 1).unwrap();
        assert!(grid_max_error(&m, 1000) <= m.error_bound());
        let m = cheby_coeffs(5.0, iv(1.0, 2.0), 12).unwrap();
        assert!(grid_max_error(&m, 10_000) <= m.error_bound() + 1e-13 * 32.0);
    }

    #[test]
    fn endpoint_within_bound() {
        for (q, a, b, n) in [(0.5, 1.0, 4.0, 3), (3.7, 0.2, 1.0, 9), (60.0, 1.0, 2.0, 30)] {
            let m = cheby_coeffs(q, iv(a, b), n).unwrap();
            let (v, inside) = m.eval_flagged(b);
            assert!(inside);
            assert!((v - b.powf(q)).abs() <= m.error_bound() + 1e-12 * b.powf(q));
        }
        let m = cheby_coeffs(60.0, iv(1.0, 2.0), 30).unwrap();
        assert!((m.eval(1.5) - 1.5f64.powi(60)).abs() <= m.error_bound() + 1e-12 * 2f64.powi(60));
        assert!(!m.eval_flagged(2.5).1);
    }

    #[test]
    fn degenerate_interval_is_exact() {
        let m = cheby_coeffs(2.5, iv(3.0, 3.0), 4).unwrap();
        assert_eq!(m.eval(3.0), 3f64.powf(2.5));
    }

    #[test]
    fn degree_bound_values() {
        // ln(40 * 243 * (sqrt2 - 1) * (32 + sqrt(1024.05))) / ln(3 + 2 sqrt2) = 7.07
        assert_eq!(degree_bound(0.1, 10.0, 2f64.sqrt()).unwrap(), 8);
        assert_eq!(degree_bound(0.1, 10.0, 1.0).unwrap(), 0);
        assert!(degree_bound(0.1, 10.0, 0.9).is_err());
        assert!(degree_bound(0.0, 10.0, 2.0).is_err());
        // monotone in kappa and epsilon
        for p in [2.0, 5.0, 40.0, 120.0] {
            let mut last = 0;
            for i in 1..40 {
                let k = 1.0 + 0.05 * i as f64;
                let n = degree_bound(0.1, p, k).unwrap();
                assert!(n >= last);
                last = n;
            }
            let mut last = usize::MAX;
            for i in 1..=20 {
                let n = degree_bound(0.05 * i as f64, p, 1.7).unwrap();
                assert!(n <= last);
                last = n;
            }
        }
        // no overflow for large p
        assert!(degree_bound(0.1, 2000.0, 3.0).unwrap() > 0);
    }

    #[test]
    fn scaled_identity() {
        let c = 2.5;
        let n = 12;
        let a = DenseSym::diagonal(&vec![c; n]);
        let interval = iv(1.0, 4.0);
        let cfg = ChebyConfig::new(3.0, 6, 40, Distribution::Rademacher, 4).unwrap();
        let r = cheby_schatten_estimate(&a, interval, &cfg).unwrap();
        let psi = cheby_coeffs(1.5, interval, 6).unwrap().eval(c);
        let expected = (n as f64 * psi * psi).powf(1.0 / 3.0);
        assert!((r.value - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn polynomial_exactness_matches_plain_estimator() {
        let a = DenseSym::diagonal(&[1.0, 1.5, 2.0, 3.0, 4.0]);
        for p in [2.0, 4.0, 6.0] {
            let mc = schatten_estimate(&a, &McConfig::new(p, 77, Distribution::Gaussian, 12).unwrap()).unwrap();
            let cfg = ChebyConfig::new(p, (p / 2.0) as usize, 77, Distribution::Gaussian, 12).unwrap();
            let ch = cheby_schatten_estimate(&a, iv(0.9, 4.2), &cfg).unwrap();
            assert!((mc.value - ch.value).abs() <= 1e-8 * mc.value);
        }
    }

    #[test]
    fn matvec_budget_and_nonnegativity() {
        let a = Counted::new(DenseSym::diagonal(&[1.0, 2.0, 3.0, 5.0]));
        let cfg = ChebyConfig::new(7.5, 5, 70, Distribution::Gaussian, 1).unwrap();
        let r = cheby_schatten_estimate(&a, iv(0.5, 6.0), &cfg).unwrap();
        assert_eq!(r.matvecs, 350);
        assert_eq!(a.matvecs(), 350);
        assert!(r.samples.iter().all(|s| *s >= 0.0));
        assert_eq!(r.degree, Some(5));
    }

    #[test]
    fn config_validation() {
        assert!(ChebyConfig::new(0.5, 3, 10, Distribution::Gaussian, 0).is_err());
        assert!(ChebyConfig::new(2.0, 0, 10, Distribution::Gaussian, 0).is_err());
        assert!(ChebyConfig::new(2.0, 3, 0, Distribution::Gaussian, 0).is_err());
        let a = DenseSym::identity(3);
        let cfg = ChebyConfig::new(2.0, 3, 10, Distribution::Gaussian, 0).unwrap();
        assert!(cheby_schatten_estimate(&a, iv(1.0, 1.0), &cfg).is_err());
        assert!(!cfg.is_cost_effective());
        assert!(ChebyConfig::new(120.0, 20, 10, Distribution::Gaussian, 0).unwrap().is_cost_effective());
    }

    #[test]
    fn json_export_documents_convention() {
        let m = cheby_coeffs(1.0, iv(1.0, 3.0), 2).unwrap();
        let v = m.to_json();
        assert_eq!(v["N"], 2);
        assert_eq!(v["coeffs"].as_array().unwrap().len(), 3);
        assert!(v["convention"].as_str().unwrap().contains("halved"));
    }
}
