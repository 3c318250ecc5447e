//! Bayesian inverse problem for the initial state of the 1D heat equation.
//!
//! `u_t = k u_xx` on `(0, 1)` with homogeneous Dirichlet conditions is
//! discretized by second-order finite differences on `nx` interior nodes
//! (`h = 1/(nx + 1)`) and implicit Euler in time. The parameter-to-
//! observable map `F` sends the initial state to sensor readings (linear
//! interpolation between nodes) at the observation times, ordered
//! time-major then by sensor.
//!
//! With noise precision `sigma^-2` and prior precision `gamma K` (`K` the
//! Dirichlet Laplacian), the posterior covariance is
//! `Gamma_post = (sigma^-2 F^T F + gamma K)^-1`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, EstimatorSpec};
use crate::linops::{check_len, dot, norm_sq, Definiteness, DenseSym, LinearOperator};
use crate::mc_estimator::EstimateReport;

/// Model parameters. Defaults give the 254-node, 17-sensor problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatParams {
    pub nx: usize,
    pub diffusion: f64,
    pub t_final: f64,
    pub nt: usize,
    pub sensors: Vec<f64>,
    pub obs_times: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        Self {
            nx: 254,
            diffusion: 2e-4,
            t_final: 1.0,
            nt: 100,
            sensors: equally_spaced_sensors(17),
            obs_times: vec![0.25, 0.5, 0.75, 1.0],
            sigma: 0.002,
            gamma: 1e-4,
        }
    }
}

/// `count` sensors at `i / (count + 1)`, `i = 1..=count`.
pub fn equally_spaced_sensors(count: usize) -> Vec<f64> {
    (1..=count).map(|i| i as f64 / (count + 1) as f64).collect()
}

/// Thomas factorization of the constant tridiagonal `tridiag(off, diag, off)`.
#[derive(Debug, Clone)]
struct Tridiagonal {
    off: f64,
    // modified super-diagonal and pivots
    upper: Vec<f64>,
    pivots: Vec<f64>,
}

impl Tridiagonal {
    fn new(n: usize, diag: f64, off: f64) -> Self {
        let mut upper = vec![0.0; n];
        let mut pivots = vec![0.0; n];
        pivots[0] = diag;
        upper[0] = off / diag;
        for i in 1..n {
            pivots[i] = diag - off * upper[i - 1];
            upper[i] = off / pivots[i];
        }
        Self { off, upper, pivots }
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = x.len();
        x[0] /= self.pivots[0];
        for i in 1..n {
            x[i] = (x[i] - self.off * x[i - 1]) / self.pivots[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.upper[i] * x[i + 1];
        }
    }
}

/// The discretized forward model with its precomputed step solver.
#[derive(Debug, Clone)]
pub struct HeatModel {
    params: HeatParams,
    h: f64,
    step_solver: Tridiagonal,
    /// 1-based time step index of each observation time
    obs_steps: Vec<usize>,
    /// (left node, weight of left node) per sensor, nodes 0..=nx+1
    stencils: Vec<(usize, f64)>,
}

impl HeatModel {
    pub fn new(params: HeatParams) -> Result<Self> {
        if params.nx < 2 {
            return Err(Error::param("nx", "need at least 2 interior nodes"));
        }
        if params.nt == 0 {
            return Err(Error::param("nt", "need at least one time step"));
        }
        for (name, v) in [
            ("diffusion", params.diffusion),
            ("t_final", params.t_final),
            ("sigma", params.sigma),
            ("gamma", params.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if params.sensors.is_empty() || params.obs_times.is_empty() {
            return Err(Error::param("sensors", "need at least one sensor and one observation time"));
        }
        if let Some(s) = params.sensors.iter().find(|s| !(**s > 0.0 && **s < 1.0)) {
            return Err(Error::param("sensors", format!("position {s} is not strictly inside (0, 1)")));
        }
        let dt = params.t_final / params.nt as f64;
        let mut obs_steps = Vec::with_capacity(params.obs_times.len());
        for &t in &params.obs_times {
            let steps = t / dt;
            let rounded = steps.round();
            if !(t > 0.0 && t <= params.t_final * (1.0 + 1e-12)) || (steps - rounded).abs() > 1e-12 * steps.max(1.0) {
                return Err(Error::MisalignedObservation { time: t, dt });
            }
            obs_steps.push(rounded as usize);
        }
        if obs_steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("obs_times", "must be strictly increasing"));
        }

        let h = 1.0 / (params.nx + 1) as f64;
        let r = dt * params.diffusion / (h * h);
        let stencils = params
            .sensors
            .iter()
            .map(|&s| {
                let g = s / h;
                let left = (g.floor() as usize).min(params.nx);
                (left, 1.0 - (g - left as f64))
            })
            .collect();
        Ok(Self {
            step_solver: Tridiagonal::new(params.nx, 1.0 + 2.0 * r, -r),
            h,
            obs_steps,
            stencils,
            params,
        })
    }

    pub fn params(&self) -> &HeatParams {
        &self.params
    }

    pub fn nx(&self) -> usize {
        self.params.nx
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn dt(&self) -> f64 {
        self.params.t_final / self.params.nt as f64
    }

    pub fn n_obs(&self) -> usize {
        self.params.sensors.len() * self.params.obs_times.len()
    }

    /// One implicit Euler step `u <- (I + dt k L)^-1 u`.
    pub fn step(&self, u: &mut [f64]) {
        self.step_solver.solve_in_place(u);
    }

    fn node(u: &[f64], i: usize) -> f64 {
        if i == 0 || i > u.len() {
            0.0
        } else {
            u[i - 1]
        }
    }

    fn observe(&self, u: &[f64], out: &mut Vec<f64>) {
        for &(left, w) in &self.stencils {
            out.push(w * Self::node(u, left) + (1.0 - w) * Self::node(u, left + 1));
        }
    }

    fn observe_adjoint(&self, d: &[f64], v: &mut [f64]) {
        let n = v.len();
        for (&(left, w), &di) in self.stencils.iter().zip(d) {
            if (1..=n).contains(&left) {
                v[left - 1] += w * di;
            }
            if (1..=n).contains(&(left + 1)) {
                v[left] += (1.0 - w) * di;
            }
        }
    }

    /// `F phi`: march to each observation time and sample the sensors.
    pub fn apply_forward(&self, phi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.nx(), phi.len())?;
        let mut u = phi.to_vec();
        let mut out = Vec::with_capacity(self.n_obs());
        let mut next_obs = 0;
        for m in 1..=self.params.nt {
            self.step(&mut u);
            if self.obs_steps.get(next_obs) == Some(&m) {
                self.observe(&u, &mut out);
                next_obs += 1;
            }
        }
        Ok(out)
    }

    /// `F^T d` by the reverse sweep: `sum_m S^m B^T d_m`.
    pub fn apply_adjoint(&self, d: &[f64]) -> Result<Vec<f64>> {
        check_len(self.n_obs(), d.len())?;
        let ns = self.params.sensors.len();
        let mut v = vec![0.0; self.nx()];
        let mut obs = self.obs_steps.len();
        for m in (1..=self.params.nt).rev() {
            if obs > 0 && self.obs_steps[obs - 1] == m {
                obs -= 1;
                self.observe_adjoint(&d[obs * ns..(obs + 1) * ns], &mut v);
            }
            self.step(&mut v);
        }
        Ok(v)
    }

    /// `K x` with `K = h^-2 tridiag(-1, 2, -1)`.
    pub fn apply_laplacian(&self, x: &[f64], y: &mut [f64]) {
        let n = x.len();
        let s = 1.0 / (self.h * self.h);
        for i in 0..n {
            let left = if i > 0 { x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] } else { 0.0 };
            y[i] = s * (2.0 * x[i] - left - right);
        }
    }

    /// Dense `F` (`n_obs x nx`), one adjoint solve per row.
    pub fn forward_matrix(&self) -> Result<DMatrix<f64>> {
        let mut f = DMatrix::zeros(self.n_obs(), self.nx());
        let mut e = vec![0.0; self.n_obs()];
        for i in 0..self.n_obs() {
            e[i] = 1.0;
            let row = self.apply_adjoint(&e)?;
            e[i] = 0.0;
            for (j, v) in row.into_iter().enumerate() {
                f[(i, j)] = v;
            }
        }
        Ok(f)
    }

    /// Smallest eigenvalue of `K`: `(4/h^2) sin^2(pi h / 2)`.
    pub fn laplacian_min_eigenvalue(&self) -> f64 {
        4.0 / (self.h * self.h) * (std::f64::consts::PI * self.h / 2.0).sin().powi(2)
    }
}

/// How [`PosteriorCovOp`] applies `(sigma^-2 F^T F + gamma K)^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorSolver {
    /// Unpreconditioned conjugate gradients on the Hessian.
    ConjugateGradient { rel_tol: f64, max_iter: usize },
    /// Exact low-rank update of the prior covariance:
    /// `Gamma_pr - Gamma_pr F^T (sigma^2 I + F Gamma_pr F^T)^-1 F Gamma_pr`.
    LowRankUpdate,
}

impl PosteriorSolver {
    /// CG with relative residual `1e-10` and a cap of `10 nx` iterations.
    pub fn cg_default(nx: usize) -> Self {
        PosteriorSolver::ConjugateGradient {
            rel_tol: 1e-10,
            max_iter: 10 * nx,
        }
    }
}

#[derive(Debug, Clone)]
struct LowRank {
    /// `Gamma_pr F^T`, column-major `nx x n_obs`
    prior_forward_t: Vec<f64>,
    capacitance: Cholesky<f64, Dyn>,
}

/// `Gamma_post` as a matrix-free SPD operator.
///
/// `F` is materialized once (`n_obs` adjoint solves); every apply then costs
/// two products with the dense `n_obs x nx` map plus tridiagonal work.
#[derive(Debug, Clone)]
pub struct PosteriorCovOp {
    nx: usize,
    n_obs: usize,
    h: f64,
    noise_precision: f64,
    gamma: f64,
    /// row-major `n_obs x nx`
    forward: Vec<f64>,
    prior_solver: Tridiagonal,
    solver: PosteriorSolver,
    low_rank: Option<LowRank>,
}

impl PosteriorCovOp {
    pub fn new(model: &HeatModel, solver: PosteriorSolver) -> Result<Self> {
        let f = model.forward_matrix()?;
        let (nx, n_obs) = (model.nx(), model.n_obs());
        let h = model.h();
        let gamma = model.params.gamma;
        let sigma = model.params.sigma;
        let mut forward = Vec::with_capacity(nx * n_obs);
        for i in 0..n_obs {
            forward.extend(f.row(i).iter());
        }
        let s = gamma / (h * h);
        let prior_solver = Tridiagonal::new(nx, 2.0 * s, -s);

        let low_rank = match solver {
            PosteriorSolver::LowRankUpdate => {
                let mut pft = Vec::with_capacity(nx * n_obs);
                for i in 0..n_obs {
                    let mut col: Vec<f64> = f.row(i).iter().copied().collect();
                    prior_solver.solve_in_place(&mut col);
                    pft.extend(col);
                }
                let mut cap = DMatrix::zeros(n_obs, n_obs);
                for i in 0..n_obs {
                    for j in 0..n_obs {
                        cap[(i, j)] = dot(&forward[i * nx..(i + 1) * nx], &pft[j * nx..(j + 1) * nx]);
                    }
                }
                let cap = (&cap + cap.transpose()) * 0.5 + DMatrix::identity(n_obs, n_obs) * (sigma * sigma);
                let capacitance = Cholesky::new(cap)
                    .ok_or_else(|| Error::param("model", "capacitance matrix is not positive definite"))?;
                Some(LowRank {
                    prior_forward_t: pft,
                    capacitance,
                })
            }
            PosteriorSolver::ConjugateGradient { rel_tol, max_iter } => {
                if rel_tol.is_nan() || rel_tol <= 0.0 || max_iter == 0 {
                    return Err(Error::param("solver", "CG needs a positive tolerance and iteration cap"));
                }
                None
            }
        };
        Ok(Self {
            nx,
            n_obs,
            h,
            noise_precision: 1.0 / (sigma * sigma),
            gamma,
            forward,
            prior_solver,
            solver,
            low_rank,
        })
    }

    pub fn solver(&self) -> PosteriorSolver {
        self.solver
    }

    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (row, o) in self.forward.chunks_exact(self.nx).zip(out.iter_mut()) {
            *o = dot(row, x);
        }
    }

    fn forward_t_add(&self, d: &[f64], scale: f64, out: &mut [f64]) {
        for (row, di) in self.forward.chunks_exact(self.nx).zip(d) {
            let c = scale * di;
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
    }

    /// `(sigma^-2 F^T F + gamma K) x`.
    pub fn apply_hessian(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nx;
        let s = self.gamma / (self.h * self.h);
        for i in 0..n {
            let left = if i > 0 { x[i - 1] } else { 0.0 };
            let right = if i + 1 < n { x[i + 1] } else { 0.0 };
            y[i] = s * (2.0 * x[i] - left - right);
        }
        let mut fx = vec![0.0; self.n_obs];
        self.forward(x, &mut fx);
        self.forward_t_add(&fx, self.noise_precision, y);
    }

    /// Dense Hessian, for oracle checks at small `nx`.
    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        let mut hm = DMatrix::zeros(self.nx, self.nx);
        let mut e = vec![0.0; self.nx];
        let mut col = vec![0.0; self.nx];
        for j in 0..self.nx {
            e[j] = 1.0;
            self.apply_hessian(&e, &mut col);
            e[j] = 0.0;
            for i in 0..self.nx {
                hm[(i, j)] = col[i];
            }
        }
        hm
    }

    /// Solves the Hessian system by CG, returning the iteration count.
    pub fn cg_solve(&self, b: &[f64], y: &mut [f64], rel_tol: f64, max_iter: usize) -> Result<usize> {
        let n = self.nx;
        y.iter_mut().for_each(|v| *v = 0.0);
        let b_norm = norm_sq(b).sqrt();
        if b_norm == 0.0 {
            return Ok(0);
        }
        let mut r = b.to_vec();
        let mut d = r.clone();
        let mut hd = vec![0.0; n];
        let mut rr = norm_sq(&r);
        for it in 1..=max_iter {
            self.apply_hessian(&d, &mut hd);
            let alpha = rr / dot(&d, &hd);
            for i in 0..n {
                y[i] += alpha * d[i];
                r[i] -= alpha * hd[i];
            }
            let rr_next = norm_sq(&r);
            if rr_next.sqrt() <= rel_tol * b_norm {
                return Ok(it);
            }
            let beta = rr_next / rr;
            for i in 0..n {
                d[i] = r[i] + beta * d[i];
            }
            rr = rr_next;
        }
        Err(Error::CgNotConverged {
            iterations: max_iter,
            residual: rr.sqrt() / b_norm,
        })
    }

    fn low_rank_apply(&self, lr: &LowRank, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.prior_solver.solve_in_place(y);
        let mut t = nalgebra::DVector::zeros(self.n_obs);
        self.forward(y, t.as_mut_slice());
        lr.capacitance.solve_mut(&mut t);
        for (col, ti) in lr.prior_forward_t.chunks_exact(self.nx).zip(t.iter()) {
            for (yi, c) in y.iter_mut().zip(col) {
                *yi -= ti * c;
            }
        }
    }

    /// Materializes `Gamma_post` by applying it to every unit vector, then
    /// symmetrizes.
    pub fn assemble_dense(&self) -> Result<(DMatrix<f64>, f64)> {
        let n = self.nx;
        let mut g = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply_into(&e, &mut col)?;
            e[j] = 0.0;
            for i in 0..n {
                g[(i, j)] = col[i];
            }
        }
        let asym = (&g - g.transpose()).amax();
        Ok((g, asym))
    }

    /// `assemble_dense` packaged as a validated [`DenseSym`], plus the raw
    /// max-entry asymmetry before symmetrization.
    pub fn to_dense(&self) -> Result<(DenseSym, f64)> {
        let (g, asym) = self.assemble_dense()?;
        let g = (&g + g.transpose()) * 0.5;
        Ok((DenseSym::from_matrix(&g)?.with_definiteness(Definiteness::Definite), asym))
    }
}

impl LinearOperator for PosteriorCovOp {
    fn dim(&self) -> usize {
        self.nx
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        match (&self.solver, &self.low_rank) {
            (PosteriorSolver::ConjugateGradient { rel_tol, max_iter }, _) => {
                self.cg_solve(x, y, *rel_tol, *max_iter).map(|_| ())
            }
            (PosteriorSolver::LowRankUpdate, Some(lr)) => {
                self.low_rank_apply(lr, x, y);
                Ok(())
            }
            (PosteriorSolver::LowRankUpdate, None) => unreachable!("low-rank factors are built in new()"),
        }
    }

    fn definiteness(&self) -> Definiteness {
        Definiteness::Definite
    }
}

/// Estimates `||Gamma_post||_p` for the given model.
pub fn posterior_schatten(model: &HeatModel, solver: PosteriorSolver, spec: &EstimatorSpec) -> Result<EstimateReport> {
    let op = PosteriorCovOp::new(model, solver)?;
    estimator::run(&op, spec)
}
