//! Statistical properties of both estimators, checked against dense oracles.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use schatten::chebyshev::{cheby_schatten_estimate, degree_bound, ChebyConfig, SpectralInterval};
use schatten::linops::{quadratic_form, DenseSym};
use schatten::matgen::random_orthogonal;
use schatten::mc_estimator::{cheby_sample_bound, schatten_estimate, McConfig};
use schatten::probes::{derive_seed, Distribution, ProbeStream};

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_err(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

fn spd_with_spectrum(ev: &[f64], seed: u64) -> (DenseSym, DMatrix<f64>) {
    let q = random_orthogonal(ev.len(), seed);
    let a = &q * DMatrix::from_diagonal(&DVector::from_column_slice(ev)) * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    (DenseSym::from_matrix(&a).unwrap(), a)
}

fn fixed_spd10() -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let b = DMatrix::from_fn(10, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
    &b * b.transpose() / 10.0 + DMatrix::identity(10, 10)
}

#[test]
fn hutchinson_mean_matches_trace() {
    let b = fixed_spd10();
    let op = DenseSym::from_matrix(&b).unwrap();
    let stream = ProbeStream::new(Distribution::Gaussian, 5, 10);
    let n = 100_000u64;
    let qs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| quadratic_form(&op, &stream.probe(j)).unwrap())
        .collect();
    let tol = 5.0 * (2.0 * b.norm_squared() / n as f64).sqrt();
    assert!((mean(&qs) - b.trace()).abs() <= tol, "{} vs {}", mean(&qs), b.trace());
}

#[test]
fn power_mean_is_unbiased() {
    let b = fixed_spd10();
    let op = DenseSym::from_matrix(&b).unwrap();
    for p in [2u32, 3] {
        let bp = b.pow(p);
        let exact = bp.trace();
        let (m, r) = (20usize, 500u64);
        let xs: Vec<f64> = (0..r)
            .into_par_iter()
            .map(|i| {
                let cfg = McConfig::new(f64::from(p), m, Distribution::Gaussian, derive_seed(31, i)).unwrap();
                schatten_estimate(&op, &cfg).unwrap().p_power_mean
            })
            .collect();
        let se = (2.0 * bp.norm_squared() / (m as f64 * r as f64)).sqrt();
        assert!((mean(&xs) - exact).abs() <= 5.0 * se, "p={p}");
    }
}

#[test]
fn norm_estimate_is_biased_low_jensen() {
    let (op, _) = spd_with_spectrum(&(1..=30).map(f64::from).collect::<Vec<_>>(), 3);
    let exact: f64 = (1..=30).map(|k| f64::from(k).powi(4)).sum::<f64>().powf(0.25);
    for m in [1usize, 5] {
        let xs: Vec<f64> = (0..10_000u64)
            .into_par_iter()
            .map(|i| {
                let cfg = McConfig::new(4.0, m, Distribution::Gaussian, derive_seed(41 + m as u64, i)).unwrap();
                schatten_estimate(&op, &cfg).unwrap().value
            })
            .collect();
        assert!(xs.iter().all(|x| *x >= 0.0));
        assert!(mean(&xs) <= exact + 5.0 * std_err(&xs), "M={m}: {} vs {exact}", mean(&xs));
    }
}

/// Interpolant of `x^q` at the `N + 1` Chebyshev extrema, evaluated by a
/// direct cosine sum (independent of the library's FFT path).
fn psi(q: f64, a: f64, b: f64, n: usize) -> impl Fn(f64) -> f64 {
    let pi = std::f64::consts::PI;
    let nodes: Vec<f64> = (0..=n).map(|j| (pi * j as f64 / n as f64).cos()).collect();
    let fx: Vec<f64> = nodes.iter().map(|t| (0.5 * (b - a) * t + 0.5 * (b + a)).powf(q)).collect();
    let c: Vec<f64> = (0..=n)
        .map(|k| {
            let s: f64 = fx
                .iter()
                .enumerate()
                .map(|(j, v)| {
                    let w = if j == 0 || j == n { 0.5 } else { 1.0 };
                    w * v * (pi * (j * k) as f64 / n as f64).cos()
                })
                .sum();
            let ck = 2.0 * s / n as f64;
            if k == 0 || k == n {
                0.5 * ck
            } else {
                ck
            }
        })
        .collect();
    move |x: f64| {
        let t = ((2.0 * x - (a + b)) / (b - a)).clamp(-1.0, 1.0);
        let th = t.acos();
        c.iter().enumerate().map(|(k, ck)| ck * (k as f64 * th).cos()).sum()
    }
}

#[test]
fn cheby_estimate_converges_to_trace_phi() {
    let ev: Vec<f64> = (0..30).map(|k| 1.0 + 3.0 * f64::from(k) / 29.0).collect();
    let (op, _) = spd_with_spectrum(&ev, 9);
    let (p, n) = (7.0, 3usize);
    let f = psi(p / 2.0, 1.0, 4.0, n);
    let tr_phi: f64 = ev.iter().map(|l| f(*l).powi(2)).sum();
    let target = tr_phi.powf(1.0 / p);
    let interval = SpectralInterval::new(1.0, 4.0).unwrap();
    let mut errs = Vec::new();
    for m in [100usize, 100_000] {
        let cfg = ChebyConfig::new(p, n, m, Distribution::Gaussian, 12).unwrap();
        let r = cheby_schatten_estimate(&op, interval, &cfg).unwrap();
        assert!(r.samples.iter().all(|s| *s >= 0.0));
        errs.push((r.value - target).abs() / target);
    }
    assert!(errs[1] < 0.01, "{errs:?}");
    assert!(errs[1] < errs[0], "{errs:?}");
}

#[test]
fn chebyshev_coverage_theorem() {
    let (eps, delta, p) = (0.25, 0.1, 6.0);
    let kappa = 2.0;
    let n = degree_bound(eps, p, kappa).unwrap();
    let m = cheby_sample_bound(eps, delta).unwrap() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ev: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..=4.0)).collect();
    ev[0] = 1.0;
    ev[1] = 4.0;
    let (op, _) = spd_with_spectrum(&ev, 43);
    let exact = ev.iter().map(|l| l.powf(p)).sum::<f64>().powf(1.0 / p);
    let interval = SpectralInterval::new(1.0, 4.0).unwrap();
    let r = 2000u64;
    let hits = (0..r)
        .into_par_iter()
        .filter(|i| {
            let cfg = ChebyConfig::new(p, n, m, Distribution::Gaussian, derive_seed(55, *i)).unwrap().streaming();
            let v = cheby_schatten_estimate(&op, interval, &cfg).unwrap().value;
            (v - exact).abs() / exact <= eps
        })
        .count();
    let coverage = hits as f64 / r as f64;
    let floor = (1.0 - delta) - 3.0 * (delta * (1.0 - delta) / r as f64).sqrt();
    assert!(coverage >= floor, "N={n} M={m}: coverage {coverage}");
}
