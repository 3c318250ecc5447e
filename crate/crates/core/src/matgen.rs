//! Test matrices: the four synthetic spectra and Matrix Market I/O.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, QR};
use serde::{Deserialize, Serialize};

use crate::error::{Error, MatrixMarketError, Result};
use crate::linops::{Definiteness, DenseSym, SparseSym};
use crate::probes::{Distribution, ProbeStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `diag(6, 7, ..., n + 5)`
    Linear,
    /// `n/5` eigenvalues at 100, the rest at 1
    Clustered,
    /// `diag(1, 2^-2, ..., n^-2)`
    Quadratic,
    /// `diag(0.9, 0.9^2, ..., 0.9^n)`
    Exponential,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Linear, Family::Clustered, Family::Quadratic, Family::Exponential];

    pub fn min_dim(&self) -> usize {
        match self {
            Family::Clustered => 5,
            _ => 1,
        }
    }

    /// The prescribed spectrum, in family order (not sorted).
    pub fn eigenvalues(&self, n: usize) -> Result<Vec<f64>> {
        if n < self.min_dim() {
            return Err(Error::param(
                "n",
                format!("{self} matrices need n >= {}, got {n}", self.min_dim()),
            ));
        }
        Ok(match self {
            Family::Linear => (0..n).map(|k| (k + 6) as f64).collect(),
            Family::Clustered => {
                let high = n / 5;
                (0..n).map(|k| if k < high { 100.0 } else { 1.0 }).collect()
            }
            Family::Quadratic => (1..=n).map(|k| (k as f64).powi(-2)).collect(),
            Family::Exponential => (1..=n).map(|k| 0.9f64.powi(k as i32)).collect(),
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::Clustered => "clustered",
            Family::Quadratic => "quadratic",
            Family::Exponential => "exponential",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lin" => Ok(Family::Linear),
            "clustered" | "cluster" => Ok(Family::Clustered),
            "quadratic" | "quad" => Ok(Family::Quadratic),
            "exponential" | "exp" => Ok(Family::Exponential),
            other => Err(Error::param("family", format!("unknown matrix family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub family: Family,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(family: Family, n: usize, seed: u64) -> Self {
        Self { family, n, seed }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticMatrix {
    pub matrix: DenseSym,
    /// The prescribed spectrum `D`.
    pub eigenvalues: Vec<f64>,
    /// The orthogonal factor `Q` with `A = Q D Q^T`.
    pub q: DMatrix<f64>,
}

/// Orthogonal `Q` from the QR factorization of a seeded standard Gaussian
/// matrix, with columns signed so that `R` has a positive diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let stream = ProbeStream::new(Distribution::Gaussian, seed, n);
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        g.set_column(j, &nalgebra::DVector::from_vec(stream.probe(j as u64)));
    }
    let qr = QR::new(g);
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds `A = Q D Q^T` for one of the synthetic families.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticMatrix> {
    let eigenvalues = spec.family.eigenvalues(spec.n)?;
    let q = random_orthogonal(spec.n, spec.seed);
    let mut qd = q.clone();
    for (j, d) in eigenvalues.iter().enumerate() {
        qd.column_mut(j).scale_mut(*d);
    }
    let a = &qd * q.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let matrix = DenseSym::from_matrix(&a)?.with_definiteness(Definiteness::Definite);
    Ok(SyntheticMatrix { matrix, eigenvalues, q })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MmSymmetry {
    General,
    Symmetric,
}

/// Relative tolerance for accepting a `general` file as symmetric.
pub const GENERAL_SYMMETRY_TOL: f64 = 1e-10;

/// Reads a real coordinate Matrix Market file into a symmetric CSR matrix.
pub fn load_matrix_market(path: impl AsRef<Path>) -> Result<SparseSym> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_market(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_matrix_market<R: BufRead>(reader: R) -> Result<SparseSym> {
    let io = |source| Error::Io {
        path: Default::default(),
        source,
    };
    let mut lines = reader.lines().enumerate();

    let (_, banner) = lines.next().ok_or(MatrixMarketError::Header {
        line: 1,
        reason: "empty file".into(),
    })?;
    let banner = banner.map_err(io)?;
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(MatrixMarketError::Header {
            line: 1,
            reason: format!("expected `%%MatrixMarket matrix <format> <field> <symmetry>`, got `{banner}`"),
        }
        .into());
    }
    if tokens[2] != "coordinate" {
        return Err(MatrixMarketError::Format(tokens[2].clone()).into());
    }
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(MatrixMarketError::FieldType(other.to_string()).into()),
    }
    let symmetry = match tokens[4].as_str() {
        "symmetric" => MmSymmetry::Symmetric,
        "general" => MmSymmetry::General,
        other => return Err(MatrixMarketError::Symmetry(other.to_string()).into()),
    };

    // size line, skipping comments and blanks
    let (nrows, ncols, nnz) = loop {
        let (idx, line) = lines.next().ok_or(MatrixMarketError::Header {
            line: 2,
            reason: "missing size line".into(),
        })?;
        let line = line.map_err(io)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<usize>().map_err(|_| MatrixMarketError::Header {
                line: idx + 1,
                reason: format!("bad size line `{t}`"),
            })
        };
        if parts.len() != 3 {
            return Err(MatrixMarketError::Header {
                line: idx + 1,
                reason: format!("bad size line `{t}`"),
            }
            .into());
        }
        break (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    };
    if nrows != ncols {
        return Err(MatrixMarketError::NotSquare { nrows, ncols }.into());
    }
    if nrows == 0 {
        return Err(MatrixMarketError::Header {
            line: 2,
            reason: "zero dimension".into(),
        }
        .into());
    }

    let mut triplets = Vec::with_capacity(if symmetry == MmSymmetry::Symmetric { 2 * nnz } else { nnz });
    let mut found = 0usize;
    for (idx, line) in lines {
        let line = line.map_err(io)?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let line_no = idx + 1;
        let parts: Vec<&str> = t.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(MatrixMarketError::Entry {
                line: line_no,
                reason: format!("expected `row col value`, got `{t}`"),
            }
            .into());
        }
        let bad = |what: &str| MatrixMarketError::Entry {
            line: line_no,
            reason: format!("bad {what} in `{t}`"),
        };
        let row: usize = parts[0].parse().map_err(|_| bad("row index"))?;
        let col: usize = parts[1].parse().map_err(|_| bad("column index"))?;
        let val: f64 = parts[2].parse().map_err(|_| bad("value"))?;
        if row == 0 || col == 0 || row > nrows || col > ncols {
            return Err(MatrixMarketError::IndexOutOfRange {
                line: line_no,
                row,
                col,
                nrows,
                ncols,
            }
            .into());
        }
        let (i, j) = (row - 1, col - 1);
        triplets.push((i, j, val));
        if symmetry == MmSymmetry::Symmetric && i != j {
            triplets.push((j, i, val));
        }
        found += 1;
    }
    if found != nnz {
        return Err(MatrixMarketError::EntryCount { expected: nnz, found }.into());
    }

    if symmetry == MmSymmetry::General {
        check_general_symmetry(nrows, &triplets)?;
        // Average the two triangles so the stored matrix is exactly symmetric.
        let mut sym = Vec::with_capacity(2 * triplets.len());
        for &(i, j, v) in &triplets {
            sym.push((i, j, 0.5 * v));
            sym.push((j, i, 0.5 * v));
        }
        triplets = sym;
    }
    SparseSym::from_triplets(nrows, &triplets)
}

fn check_general_symmetry(n: usize, triplets: &[(usize, usize, f64)]) -> Result<()> {
    let mut map = std::collections::HashMap::with_capacity(triplets.len());
    for &(i, j, v) in triplets {
        *map.entry((i, j)).or_insert(0.0) += v;
    }
    let scale = map.values().fold(0.0f64, |m: f64, v: &f64| m.max(v.abs()));
    let tol = GENERAL_SYMMETRY_TOL * scale;
    for (&(i, j), &v) in &map {
        if i < j || (i >= n) {
            continue;
        }
        let t = map.get(&(j, i)).copied().unwrap_or(0.0);
        if (v - t).abs() > tol {
            return Err(MatrixMarketError::Asymmetric {
                row: i + 1,
                col: j + 1,
                defect: (v - t).abs(),
            }
            .into());
        }
    }
    for (&(i, j), &v) in &map {
        if i < j && !map.contains_key(&(j, i)) && v.abs() > tol {
            return Err(MatrixMarketError::Asymmetric {
                row: i + 1,
                col: j + 1,
                defect: v.abs(),
            }
            .into());
        }
    }
    Ok(())
}

/// Writes the lower triangle in `coordinate real symmetric` form. Values use
/// Rust's shortest round-trip formatting, so reloading is exact.
pub fn write_matrix_market<W: Write>(m: &SparseSym, mut out: W) -> std::io::Result<()> {
    let lower: Vec<(usize, usize, f64)> = m.entries().filter(|(i, j, _)| i >= j).collect();
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.n(), m.n(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    out.flush()
}

pub fn save_matrix_market(m: &SparseSym, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let wrap = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(wrap)?;
    write_matrix_market(m, BufWriter::new(file)).map_err(wrap)
}

pub fn save_dense_matrix_market(m: &DenseSym, path: impl AsRef<Path>) -> Result<()> {
    save_matrix_market(&SparseSym::from_dense(m), path)
}
