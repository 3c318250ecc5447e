//! Matrix-free Schatten p-norm estimation for symmetric positive
//! semi-definite operators.
//!
//! * [`mc_estimator`]: Monte Carlo estimator for integer `p`, the trace
//!   estimator and the `(epsilon, delta)` sample-size bounds.
//! * [`chebyshev`]: Chebyshev-accelerated estimator for real `p`, its degree
//!   bound and the uniform interpolation error bound.
//! * [`spectrum`]: Lanczos estimates of the spectral interval.
//! * [`matgen`]: synthetic test spectra and Matrix Market I/O.
//! * [`oed_model`]: posterior covariance of a 1D heat-equation inverse
//!   problem, exposed as a matrix-free operator.
//! * [`harness`]: repeated-realization error envelopes.

pub mod chebyshev;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linops;
pub mod matgen;
pub mod mc_estimator;
pub mod oed_model;
pub mod probes;
mod sampling;
pub mod spectrum;

pub use chebyshev::{
    cheby_coeffs, cheby_schatten_estimate, degree_bound, trefethen_bound, ChebyConfig, ChebyshevModel,
    SpectralInterval,
};
pub use error::{Error, MatrixMarketError, Result};
pub use linops::{
    apply, apply_power, quadratic_form, Counted, Definiteness, DenseSym, LinearOperator, SparseSym,
};
pub use mc_estimator::{
    cheby_sample_bound, sample_bound, schatten_estimate, schatten_exact, trace_estimate, variance_bound,
    EstimateReport, McConfig, Method,
};
pub use probes::{Distribution, ProbeStream};
pub use estimator::EstimatorSpec;
pub use harness::{n_sweep, quantile, run_envelope, Envelope, EnvelopeCell, ExperimentPlan, MatrixSource};
pub use matgen::{gen_synthetic, Family, SyntheticSpec};
pub use oed_model::{posterior_schatten, HeatModel, HeatParams, PosteriorCovOp, PosteriorSolver};
