//! Matrix-free symmetric linear operators.
//!
//! Estimators only ever see an operator through [`LinearOperator`]: its
//! dimension and its action on vectors. Dense, sparse (CSR), diagonal,
//! diagonal-similarity (`Q D Q^T`) and a couple of composed wrappers are
//! provided, along with [`Counted`], which tallies every matvec.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// What the constructor of an operator promises about its spectrum.
///
/// Nothing is verified: checking definiteness needs spectral work, so
/// violations only show up through quadratic-form tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Definiteness {
    #[default]
    Unknown,
    Semidefinite,
    Definite,
}

/// A symmetric operator `A` on `R^n`, accessed only through products `A x`.
///
/// `apply_into` must be a pure function of `(self, x)`; implementations are
/// shared between rayon workers.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y <- A x`. Callers guarantee `x.len() == y.len() == self.dim()`.
    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()>;

    /// `Y <- A X` for `k` vectors stored back to back (column-major `n x k`).
    ///
    /// Counts as `k` matvecs. The default loops over columns.
    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        let n = self.dim();
        for (xc, yc) in x.chunks_exact(n).zip(y.chunks_exact_mut(n)).take(k) {
            self.apply_into(xc, yc)?;
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        Definiteness::Unknown
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        (**self).apply_into(x, y)
    }
    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        (**self).apply_block_into(x, y, k)
    }
    fn definiteness(&self) -> Definiteness {
        (**self).definiteness()
    }
}

impl<T: LinearOperator + ?Sized + Send> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        (**self).apply_into(x, y)
    }
    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        (**self).apply_block_into(x, y, k)
    }
    fn definiteness(&self) -> Definiteness {
        (**self).definiteness()
    }
}

pub(crate) fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Returns `A x`.
pub fn apply<O: LinearOperator + ?Sized>(op: &O, x: &[f64]) -> Result<Vec<f64>> {
    check_len(op.dim(), x.len())?;
    let mut y = vec![0.0; x.len()];
    op.apply_into(x, &mut y)?;
    Ok(y)
}

/// Returns `A^k x` by `k` successive applies.
pub fn apply_power<O: LinearOperator + ?Sized>(op: &O, x: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::param("k", "power must be at least 1"));
    }
    check_len(op.dim(), x.len())?;
    let mut cur = x.to_vec();
    let mut next = vec![0.0; x.len()];
    for _ in 0..k {
        op.apply_into(&cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Returns `x^T A x`.
pub fn quadratic_form<O: LinearOperator + ?Sized>(op: &O, x: &[f64]) -> Result<f64> {
    let ax = apply(op, x)?;
    Ok(dot(x, &ax))
}

/// Dot product with four independent accumulators. The summation order is a
/// fixed function of the length, so results are reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Wraps an operator and counts every vector it is applied to.
///
/// The counter is atomic, so a `Counted` operator can be shared across
/// workers; each block apply of `k` vectors adds `k`.
#[derive(Debug)]
pub struct Counted<O> {
    inner: O,
    count: AtomicU64,
}

impl<O: LinearOperator> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn matvecs(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: LinearOperator> LinearOperator for Counted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.apply_into(x, y)
    }

    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        self.count.fetch_add(k as u64, Ordering::Relaxed);
        self.inner.apply_block_into(x, y, k)
    }

    fn definiteness(&self) -> Definiteness {
        self.inner.definiteness()
    }
}

/// Dense symmetric matrix in row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSym {
    n: usize,
    data: Vec<f64>,
    definiteness: Definiteness,
}

impl DenseSym {
    /// Relative tolerance for the symmetry check at construction.
    pub const SYMMETRY_TOL: f64 = 1e-12;

    /// Builds from row-major data, rejecting input whose asymmetry exceeds
    /// `1e-12 * max |a_ij|`.
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "dimension must be positive"));
        }
        check_len(n * n, data.len())?;
        let scale = data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tolerance = Self::SYMMETRY_TOL * scale;
        let mut defect = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                defect = defect.max((data[i * n + j] - data[j * n + i]).abs());
            }
        }
        if defect > tolerance || defect.is_nan() {
            return Err(Error::NotSymmetric { defect, tolerance });
        }
        Ok(Self {
            n,
            data,
            definiteness: Definiteness::Unknown,
        })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::new(n, data)
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n]).with_definiteness(Definiteness::Definite)
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut data = vec![0.0; n * n];
        for (i, v) in d.iter().enumerate() {
            data[i * n + i] = *v;
        }
        let definiteness = if d.iter().all(|v| *v > 0.0) {
            Definiteness::Definite
        } else if d.iter().all(|v| *v >= 0.0) {
            Definiteness::Semidefinite
        } else {
            Definiteness::Unknown
        };
        Self {
            n,
            data,
            definiteness,
        }
    }

    /// Converts a square nalgebra matrix, validating symmetry.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::param("matrix", "must be square"));
        }
        let n = m.nrows();
        Self::from_fn(n, |i, j| m[(i, j)])
    }

    pub fn with_definiteness(mut self, d: Definiteness) -> Self {
        self.definiteness = d;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    /// Eigenvalues in ascending order from a dense symmetric eigensolver.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.to_matrix());
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl LinearOperator for DenseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        for (row, yi) in self.data.chunks_exact(self.n).zip(y.iter_mut()) {
            *yi = dot(row, x);
        }
        Ok(())
    }

    fn apply_block_into(&self, x: &[f64], y: &mut [f64], k: usize) -> Result<()> {
        let n = self.n;
        debug_assert!(x.len() >= n * k && y.len() >= n * k);
        // The matrix is symmetric, so its row-major storage doubles as
        // column-major; X and Y are column-major n x k.
        unsafe {
            matrixmultiply::dgemm(
                n,
                n,
                k,
                1.0,
                self.data.as_ptr(),
                n as isize,
                1,
                x.as_ptr(),
                1,
                n as isize,
                0.0,
                y.as_mut_ptr(),
                1,
                n as isize,
            );
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        self.definiteness
    }
}

/// Symmetric matrix in compressed sparse row form, both triangles stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    definiteness: Definiteness,
}

impl SparseSym {
    pub const SYMMETRY_TOL: f64 = 1e-12;

    /// Builds from raw CSR arrays. Column indices must be strictly
    /// increasing within each row and the matrix must equal its transpose
    /// (to `1e-12 * max |a_ij|`).
    pub fn new(n: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "dimension must be positive"));
        }
        check_len(n + 1, row_ptr.len())?;
        check_len(col_idx.len(), values.len())?;
        if row_ptr[0] != 0 || row_ptr[n] != col_idx.len() {
            return Err(Error::param("row_ptr", "must start at 0 and end at nnz"));
        }
        for i in 0..n {
            if row_ptr[i] > row_ptr[i + 1] {
                return Err(Error::param("row_ptr", "must be nondecreasing"));
            }
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param("col_idx", format!("row {i} is not strictly increasing")));
            }
            if cols.last().is_some_and(|&c| c >= n) {
                return Err(Error::param("col_idx", format!("row {i} has a column out of range")));
            }
        }
        let m = Self {
            n,
            row_ptr,
            col_idx,
            values,
            definiteness: Definiteness::Unknown,
        };
        let (defect, scale) = m.symmetry_defect();
        let tolerance = Self::SYMMETRY_TOL * scale;
        if defect > tolerance || defect.is_nan() {
            return Err(Error::NotSymmetric { defect, tolerance });
        }
        Ok(m)
    }

    /// Builds from (row, col, value) triplets holding both triangles.
    /// Duplicate entries are summed; explicit zeros are kept.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= n || j >= n {
                return Err(Error::param("triplets", format!("index ({i}, {j}) out of range for n = {n}")));
            }
        }
        sorted.sort_by_key(|t| (t.0, t.1));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self::new(n, row_ptr, col_idx, values)
    }

    pub fn from_dense(a: &DenseSym) -> Self {
        let n = a.n();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = a.get(i, j);
                if v != 0.0 {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
            definiteness: a.definiteness(),
        }
    }

    fn symmetry_defect(&self) -> (f64, f64) {
        // Transpose the pattern and compare entry by entry.
        let mut t_ptr = vec![0usize; self.n + 1];
        for &j in &self.col_idx {
            t_ptr[j + 1] += 1;
        }
        for i in 0..self.n {
            t_ptr[i + 1] += t_ptr[i];
        }
        let mut next = t_ptr.clone();
        let mut t_col = vec![0usize; self.nnz()];
        let mut t_val = vec![0.0; self.nnz()];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[k];
                t_col[next[j]] = i;
                t_val[next[j]] = self.values[k];
                next[j] += 1;
            }
        }
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut defect = 0.0f64;
        for i in 0..self.n {
            let (a_cols, a_vals) = (&self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]], &self.values[self.row_ptr[i]..self.row_ptr[i + 1]]);
            let (b_cols, b_vals) = (&t_col[t_ptr[i]..t_ptr[i + 1]], &t_val[t_ptr[i]..t_ptr[i + 1]]);
            let (mut p, mut q) = (0, 0);
            while p < a_cols.len() || q < b_cols.len() {
                let ca = a_cols.get(p).copied().unwrap_or(usize::MAX);
                let cb = b_cols.get(q).copied().unwrap_or(usize::MAX);
                let d = if ca == cb {
                    p += 1;
                    q += 1;
                    a_vals[p - 1] - b_vals[q - 1]
                } else if ca < cb {
                    p += 1;
                    a_vals[p - 1]
                } else {
                    q += 1;
                    b_vals[q - 1]
                };
                defect = defect.max(d.abs());
            }
        }
        (defect, scale)
    }

    pub fn with_definiteness(mut self, d: Definiteness) -> Self {
        self.definiteness = d;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates stored entries `(row, col, value)` in row order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> DenseSym {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for (i, j, v) in self.entries() {
            data[i * n + j] = v;
        }
        DenseSym {
            n,
            data,
            definiteness: self.definiteness,
        }
    }
}

impl LinearOperator for SparseSym {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        for (i, yi) in y.iter_mut().enumerate() {
            let range = self.row_ptr[i]..self.row_ptr[i + 1];
            *yi = self.col_idx[range.clone()]
                .iter()
                .zip(&self.values[range])
                .map(|(&j, v)| v * x[j])
                .sum();
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        self.definiteness
    }
}

/// Diagonal operator `diag(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagonal {
    d: Vec<f64>,
}

impl Diagonal {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::param("d", "dimension must be positive"));
        }
        Ok(Self { d })
    }

    pub fn values(&self) -> &[f64] {
        &self.d
    }
}

impl LinearOperator for Diagonal {
    fn dim(&self) -> usize {
        self.d.len()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        for ((yi, xi), di) in y.iter_mut().zip(x).zip(&self.d) {
            *yi = di * xi;
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        if self.d.iter().all(|v| *v > 0.0) {
            Definiteness::Definite
        } else if self.d.iter().all(|v| *v >= 0.0) {
            Definiteness::Semidefinite
        } else {
            Definiteness::Unknown
        }
    }
}

/// `Q diag(d) Q^T` applied in factored form, with `Q` an orthogonal matrix
/// stored row-major. Costs two dense products per apply.
#[derive(Debug, Clone)]
pub struct DiagonalSimilarity {
    n: usize,
    q: Vec<f64>,
    d: Vec<f64>,
}

impl DiagonalSimilarity {
    pub fn new(q: &DMatrix<f64>, d: Vec<f64>) -> Result<Self> {
        let n = d.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                actual: q.len(),
            });
        }
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(q[(i, j)]);
            }
        }
        Ok(Self { n, q: data, d })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.d
    }
}

impl LinearOperator for DiagonalSimilarity {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let n = self.n;
        // t = D Q^T x
        let mut t = vec![0.0; n];
        for (i, xi) in x.iter().enumerate() {
            let row = &self.q[i * n..(i + 1) * n];
            for (tj, qij) in t.iter_mut().zip(row) {
                *tj += qij * xi;
            }
        }
        for (tj, dj) in t.iter_mut().zip(&self.d) {
            *tj *= dj;
        }
        for (row, yi) in self.q.chunks_exact(n).zip(y.iter_mut()) {
            *yi = dot(row, &t);
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        if self.d.iter().all(|v| *v > 0.0) {
            Definiteness::Definite
        } else if self.d.iter().all(|v| *v >= 0.0) {
            Definiteness::Semidefinite
        } else {
            Definiteness::Unknown
        }
    }
}

/// `alpha * A`.
#[derive(Debug, Clone)]
pub struct Scaled<O> {
    inner: O,
    alpha: f64,
}

impl<O: LinearOperator> Scaled<O> {
    pub fn new(inner: O, alpha: f64) -> Self {
        Self { inner, alpha }
    }
}

impl<O: LinearOperator> LinearOperator for Scaled<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.inner.apply_into(x, y)?;
        y.iter_mut().for_each(|v| *v *= self.alpha);
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        if self.alpha > 0.0 {
            self.inner.definiteness()
        } else {
            Definiteness::Unknown
        }
    }
}

/// `A + shift * I`.
#[derive(Debug, Clone)]
pub struct Shifted<O> {
    inner: O,
    shift: f64,
}

impl<O: LinearOperator> Shifted<O> {
    pub fn new(inner: O, shift: f64) -> Self {
        Self { inner, shift }
    }
}

impl<O: LinearOperator> LinearOperator for Shifted<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.inner.apply_into(x, y)?;
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += self.shift * xi;
        }
        Ok(())
    }

    fn definiteness(&self) -> Definiteness {
        match self.inner.definiteness() {
            Definiteness::Semidefinite | Definiteness::Definite if self.shift > 0.0 => Definiteness::Definite,
            d if self.shift == 0.0 => d,
            _ => Definiteness::Unknown,
        }
    }
}
