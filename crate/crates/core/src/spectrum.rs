//! Matrix-free estimation of the extreme eigenvalues of an SPD operator.
//!
//! `m` steps of Lanczos with full reorthogonalization from a seeded random
//! start give Ritz values `theta_min <= ... <= theta_max` that lie inside
//! the true spectrum. Because Ritz values approach the extremes from
//! inside, the returned interval is widened by a fixed relative margin.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chebyshev::SpectralInterval;
use crate::error::{Error, Result};
use crate::linops::{dot, norm_sq, LinearOperator};
use crate::probes::{Distribution, ProbeStream};

/// Relative outward margin applied to both Ritz extremes.
pub const MARGIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEstimate {
    pub lambda_min_est: f64,
    pub lambda_max_est: f64,
    /// Lanczos steps actually taken (fewer than requested on breakdown).
    pub iterations: usize,
    /// All Ritz values, ascending.
    pub ritz_values: Vec<f64>,
    /// Residual norms `|beta_m s_{m,i}|` of the two extreme Ritz pairs
    /// (min, max).
    pub residuals: [f64; 2],
}

impl SpectrumEstimate {
    /// `[theta_min (1 - MARGIN), theta_max (1 + MARGIN)]`, clamping the lower
    /// end to `theta_min / 2` if the margin would make it non-positive.
    pub fn to_interval(&self) -> Result<SpectralInterval> {
        let mut a = self.lambda_min_est * (1.0 - MARGIN);
        if a <= 0.0 {
            a = self.lambda_min_est * 0.5;
        }
        if a <= 0.0 || !a.is_finite() {
            return Err(Error::NotCertifiedSpd(self.lambda_min_est));
        }
        SpectralInterval::new(a, self.lambda_max_est * (1.0 + MARGIN))
    }
}

/// Runs `steps` Lanczos iterations and returns the Ritz extremes.
pub fn lanczos_extremes<O: LinearOperator + ?Sized>(op: &O, steps: usize, seed: u64) -> Result<SpectrumEstimate> {
    let n = op.dim();
    if steps < 2 || steps > n {
        return Err(Error::param("m", format!("Lanczos steps must lie in [2, {n}], got {steps}")));
    }
    let mut v = ProbeStream::new(Distribution::Gaussian, seed, n).probe(0);
    let nv = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut w = vec![0.0; n];
    let mut scale = 0.0f64;

    for k in 0..steps {
        op.apply_into(&basis[k], &mut w)?;
        let a = dot(&w, &basis[k]);
        alpha.push(a);
        scale = scale.max(a.abs());
        // Full reorthogonalization (two passes of classical Gram-Schmidt).
        for _ in 0..2 {
            for q in &basis {
                let h = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= h * qi;
                }
            }
        }
        let b = norm_sq(&w).sqrt();
        beta.push(b);
        scale = scale.max(b);
        if k + 1 == steps || b <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        basis.push(w.iter().map(|x| x / b).collect());
    }

    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let ritz_values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let last_beta = beta[m - 1];
    let residual = |i: usize| (last_beta * eig.eigenvectors[(m - 1, i)]).abs();
    Ok(SpectrumEstimate {
        lambda_min_est: ritz_values[0],
        lambda_max_est: ritz_values[m - 1],
        iterations: m,
        residuals: [residual(order[0]), residual(order[m - 1])],
        ritz_values,
    })
}

/// Estimates an interval enclosing the spectrum of an SPD operator.
pub fn estimate_interval<O: LinearOperator + ?Sized>(op: &O, steps: usize, seed: u64) -> Result<SpectralInterval> {
    lanczos_extremes(op, steps, seed)?.to_interval()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseSym;

    #[test]
    fn diagonal_hundred() {
        let d: Vec<f64> = (1..=100).map(f64::from).collect();
        let a = DenseSym::diagonal(&d);
        let iv = estimate_interval(&a, 60, 3).unwrap();
        assert!(iv.a() <= 1.0 && iv.a() >= 0.5, "{iv:?}");
        assert!(iv.b() >= 100.0 && iv.b() <= 110.0, "{iv:?}");
    }

    #[test]
    fn scaled_identity_breaks_down_immediately() {
        let a = DenseSym::diagonal(&[3.0; 10]);
        let est = lanczos_extremes(&a, 5, 1).unwrap();
        assert_eq!(est.iterations, 1);
        assert!((est.lambda_min_est - 3.0).abs() < 1e-14);
        assert!((est.lambda_max_est - 3.0).abs() < 1e-14);
        let iv = est.to_interval().unwrap();
        assert!((iv.a() - 2.85).abs() < 1e-13 && (iv.b() - 3.15).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_step_counts() {
        let a = DenseSym::identity(4);
        assert!(lanczos_extremes(&a, 1, 0).is_err());
        assert!(lanczos_extremes(&a, 5, 0).is_err());
    }

    #[test]
    fn indefinite_operator_not_certified() {
        let a = DenseSym::diagonal(&[-2.0, -1.0, 1.0, 2.0]);
        assert!(matches!(estimate_interval(&a, 4, 0), Err(Error::NotCertifiedSpd(_))));
    }

    #[test]
    fn min_estimate_negative_triggers_clamp_path() {
        let est = SpectrumEstimate {
            lambda_min_est: 0.0,
            lambda_max_est: 1.0,
            iterations: 2,
            ritz_values: vec![0.0, 1.0],
            residuals: [0.0, 0.0],
        };
        assert!(est.to_interval().is_err());
    }
}
