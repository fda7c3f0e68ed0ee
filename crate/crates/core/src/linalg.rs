//! Dense matrix containers, the half-vectorization / factor reshaping
//! operators, norms, and the Jacobi eigen and singular value kernels.
//!
//! Everything here is dense and row-major. Matrices at the scale this crate
//! targets (n up to a few hundred) fit comfortably in cache, so there are no
//! sparse formats and no blocking.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DeniseError, Result};

/// Relative off-diagonal tolerance used by [`sym_eigen`] callers that have no
/// reason to pick their own.
pub const EIGEN_TOL: f64 = 1e-12;

const MAX_JACOBI_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// General dense `rows x cols` matrix, row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DeniseError::dim(
                format!("{} entries for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(DeniseError::dim(
                    format!("{c} columns"),
                    format!("{} in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix {
            rows: r,
            cols: c,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(DeniseError::dim(
                format!("{} rows on the right operand", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (l, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(l)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Spectral norm (largest singular value).
    pub fn spectral_norm(&self) -> Result<f64> {
        Ok(svd(self)?.singular_values.first().copied().unwrap_or(0.0))
    }

    fn check_same_shape(&self, other: &Matrix) {
        assert!(
            self.rows == other.rows && self.cols == other.cols,
            "shape mismatch: {}x{} vs {}x{}",
            self.rows,
            self.cols,
            other.rows,
            other.cols
        );
    }

    /// Reads a CSV matrix: one row per line, no header, plain decimals.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Matrix> {
        let file = std::fs::File::open(path)?;
        Matrix::read_csv_from(file)
    }

    pub fn read_csv_from(reader: impl Read) -> Result<Matrix> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        DeniseError::Parse(format!("line {}: `{field}` is not a number", line + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(DeniseError::Parse("empty matrix file".into()));
        }
        Matrix::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    pub fn write_csv_to(&self, mut out: impl Write) -> Result<()> {
        for i in 0..self.rows {
            let line = self
                .row(i)
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{line}")?;
        }
        out.flush()?;
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.check_same_shape(rhs);
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.check_same_shape(rhs);
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// Dense symmetric `n x n` matrix. Symmetry is checked on construction and
/// preserved by every operation that returns a `SymMatrix`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct SymMatrix {
    inner: Matrix,
}

impl TryFrom<Matrix> for SymMatrix {
    type Error = DeniseError;
    fn try_from(m: Matrix) -> Result<Self> {
        SymMatrix::from_matrix(m)
    }
}

impl From<SymMatrix> for Matrix {
    fn from(s: SymMatrix) -> Matrix {
        s.inner
    }
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        SymMatrix {
            inner: Matrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        SymMatrix {
            inner: Matrix::identity(n),
        }
    }

    pub fn diag(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "dimension must be at least 1");
        SymMatrix {
            inner: Matrix::diag(values),
        }
    }

    /// Builds from the lower triangle: `f(i, j)` is only called for `i >= j`.
    pub fn from_lower_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1, "dimension must be at least 1");
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { inner: m }
    }

    /// Rejects input whose asymmetry exceeds `1e-9` relative to its largest
    /// entry. Accepted input is symmetrized exactly.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        SymMatrix::from_matrix(Matrix::from_vec(n, n, data)?)
    }

    /// Accepts any square input and returns `(A + A^T) / 2`.
    pub fn from_dense_symmetrized(n: usize, data: Vec<f64>) -> Result<Self> {
        SymMatrix::symmetrize(&Matrix::from_vec(n, n, data)?)
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        let n = check_square(&m)?;
        let scale = m.max_abs().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYMMETRY_TOL * scale || gap.is_nan() {
                    return Err(DeniseError::Asymmetric { i, j, gap });
                }
            }
        }
        SymMatrix::symmetrize(&m)
    }

    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        let n = check_square(m)?;
        Ok(SymMatrix::from_lower_fn(n, |i, j| {
            0.5 * (m[(i, j)] + m[(j, i)])
        }))
    }

    /// Reads a square CSV matrix, applying the strict or symmetrizing policy.
    pub fn read_csv(path: impl AsRef<Path>, symmetrize: bool) -> Result<Self> {
        let m = Matrix::read_csv(path)?;
        if symmetrize {
            SymMatrix::symmetrize(&m)
        } else {
            SymMatrix::from_matrix(m)
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.inner.write_csv(path)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        self.inner.as_slice()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    pub fn to_matrix(&self) -> Matrix {
        self.inner.clone()
    }

    pub fn scale(&self, alpha: f64) -> SymMatrix {
        SymMatrix {
            inner: self.inner.scale(alpha),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        SymMatrix {
            inner: self.inner.map(f),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner.frobenius_norm()
    }

    pub fn l1_norm(&self) -> f64 {
        self.inner.l1_norm()
    }

    pub fn max_abs(&self) -> f64 {
        self.inner.max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.inner.is_finite()
    }

    /// Fraction of entries that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        let zeros = self.as_slice().iter().filter(|&&v| v == 0.0).count();
        zeros as f64 / (self.n() * self.n()) as f64
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner + &rhs.inner,
        }
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix {
            inner: &self.inner - &rhs.inner,
        }
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sym{:?}", self.inner)
    }
}

fn check_square(m: &Matrix) -> Result<usize> {
    if m.rows != m.cols {
        return Err(DeniseError::dim(
            "square matrix",
            format!("{}x{}", m.rows, m.cols),
        ));
    }
    if m.rows == 0 {
        return Err(DeniseError::dim("n >= 1", 0));
    }
    Ok(m.rows)
}

/// Lower triangle of a symmetric matrix, enumerated row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfVector {
    n: usize,
    data: Vec<f64>,
}

#[inline]
pub fn half_len(n: usize) -> usize {
    n * (n + 1) / 2
}

impl HalfVector {
    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != half_len(n) {
            return Err(DeniseError::dim(half_len(n), data.len()));
        }
        Ok(HalfVector { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Inverse of [`half_vectorize`].
    pub fn to_sym(&self) -> SymMatrix {
        let mut it = self.data.iter();
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for j in 0..=i {
                let v = *it.next().expect("length checked on construction");
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { inner: m }
    }
}

/// `(M11, M21, M22, M31, ..., Mnn)`.
pub fn half_vectorize(m: &SymMatrix) -> HalfVector {
    let n = m.n();
    let mut data = Vec::with_capacity(half_len(n));
    for i in 0..n {
        data.extend_from_slice(&m.inner.row(i)[..=i]);
    }
    HalfVector { n, data }
}

/// `n x k` factor `U`, so that `U U^T` is a rank-`k` PSD matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix {
    inner: Matrix,
}

impl FactorMatrix {
    pub fn n(&self) -> usize {
        self.inner.rows
    }

    pub fn k(&self) -> usize {
        self.inner.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.inner
    }

    /// Row-major flattening, the inverse of [`vector_to_factor`].
    pub fn flatten(&self) -> &[f64] {
        self.inner.as_slice()
    }

    /// `U U^T`.
    pub fn gram(&self) -> SymMatrix {
        gram_rows(self.inner.as_slice(), self.n(), self.k())
    }
}

/// Row-major reshape of a length `n*k` vector into an `n x k` factor.
pub fn vector_to_factor(x: &[f64], n: usize, k: usize) -> Result<FactorMatrix> {
    if k == 0 || k > n {
        return Err(DeniseError::dim("1 <= k <= n", format!("k = {k}, n = {n}")));
    }
    if x.len() != n * k {
        return Err(DeniseError::dim(n * k, x.len()));
    }
    Ok(FactorMatrix {
        inner: Matrix::from_vec(n, k, x.to_vec())?,
    })
}

/// `X -> g(X) g(X)^T`: symmetric, PSD, rank at most `k`.
pub fn rho(x: &[f64], n: usize, k: usize) -> Result<SymMatrix> {
    if x.len() != n * k {
        return Err(DeniseError::dim(n * k, x.len()));
    }
    Ok(gram_rows(x, n, k))
}

pub(crate) fn gram_rows(u: &[f64], n: usize, k: usize) -> SymMatrix {
    SymMatrix::from_lower_fn(n, |i, j| {
        let ui = &u[i * k..(i + 1) * k];
        let uj = &u[j * k..(j + 1) * k];
        ui.iter().zip(uj).map(|(a, b)| a * b).sum()
    })
}

pub fn l1_norm(m: &SymMatrix) -> f64 {
    m.l1_norm()
}

pub fn frobenius_norm(m: &SymMatrix) -> f64 {
    m.frobenius_norm()
}

/// Sum of singular values; for symmetric input, the sum of `|eigenvalue|`.
pub fn nuclear_norm(m: &SymMatrix) -> Result<f64> {
    Ok(sym_eigenvalues(m, EIGEN_TOL)?
        .iter()
        .map(|v| v.abs())
        .sum())
}

#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    /// Sorted descending.
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: Matrix,
}

impl EigenDecomposition {
    /// `Q diag(values) Q^T`.
    pub fn reconstruct(&self) -> Matrix {
        let q = &self.vectors;
        let n = q.rows();
        Matrix::from_fn(n, n, |i, j| {
            (0..n).map(|l| q[(i, l)] * self.values[l] * q[(j, l)]).sum()
        })
    }
}

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// Sweeps until the off-diagonal Frobenius mass drops below
/// `tol * ||A||_F`, with a cap of 100 sweeps. Eigenvalues come back sorted
/// descending; ties keep their original diagonal order.
pub fn sym_eigen(m: &SymMatrix, tol: f64) -> Result<EigenDecomposition> {
    let (values, vectors) = jacobi(m, tol, true)?;
    let vectors = vectors.expect("vectors requested");
    let order = descending_order(&values);
    let n = m.n();
    let sorted_vectors = Matrix::from_fn(n, n, |i, j| vectors[(i, order[j])]);
    Ok(EigenDecomposition {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: sorted_vectors,
    })
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigenvalues(m: &SymMatrix, tol: f64) -> Result<Vec<f64>> {
    let (values, _) = jacobi(m, tol, false)?;
    Ok(descending_order(&values)
        .into_iter()
        .map(|i| values[i])
        .collect())
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable: equal values keep index order
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn jacobi(m: &SymMatrix, tol: f64, want_vectors: bool) -> Result<(Vec<f64>, Option<Matrix>)> {
    if !m.is_finite() {
        return Err(DeniseError::Parse("non-finite entry in eigen input".into()));
    }
    let n = m.n();
    let mut a = m.to_matrix();
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let threshold = tol * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    a[(r, p)] = c * arp - s * arq;
                    a[(r, q)] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[(p, r)];
                    let aqr = a[(q, r)];
                    a[(p, r)] = c * apr - s * aqr;
                    a[(q, r)] = s * apr + c * aqr;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                if let Some(v) = v.as_mut() {
                    for r in 0..n {
                        let vrp = v[(r, p)];
                        let vrq = v[(r, q)];
                        v[(r, p)] = c * vrp - s * vrq;
                        v[(r, q)] = s * vrp + c * vrq;
                    }
                }
            }
        }
    }
    if !converged {
        return Err(DeniseError::NoConvergence {
            routine: "jacobi eigensolver",
            iterations: MAX_JACOBI_SWEEPS,
        });
    }
    Ok(((0..n).map(|i| a[(i, i)]).collect(), v))
}

/// Thin SVD `A = U diag(s) V^T` with `p = min(rows, cols)` components.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|_, s| s)
    }

    /// `U diag(f(l, s_l)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(usize, f64) -> f64) -> Matrix {
        let (m, n, p) = (self.u.rows(), self.v.rows(), self.singular_values.len());
        let mut out = Matrix::zeros(m, n);
        for l in 0..p {
            let s = f(l, self.singular_values[l]);
            if s == 0.0 {
                continue;
            }
            for i in 0..m {
                let ui = self.u[(i, l)] * s;
                if ui == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += ui * self.v[(j, l)];
                }
            }
        }
        out
    }

    /// Best rank-`r` approximation.
    pub fn truncated(&self, r: usize) -> Matrix {
        self.reconstruct_with(|l, s| if l < r { s } else { 0.0 })
    }
}

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    if !a.is_finite() {
        return Err(DeniseError::Parse("non-finite entry in svd input".into()));
    }
    if a.rows() < a.cols() {
        let t = svd(&a.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    let (m, n) = (a.rows(), a.cols());
    // work column-major: column j of A is w[j*m..(j+1)*m]
    let mut w: Vec<f64> = (0..n).flat_map(|j| (0..m).map(move |i| (i, j))).map(|(i, j)| a[(i, j)]).collect();
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    const ORTH_TOL: f64 = 1e-15;

    // columns below this squared norm are numerically zero
    let negligible = (f64::EPSILON * a.frobenius_norm()).powi(2);
    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let cp = &w[p * m..(p + 1) * m];
                    let cq = &w[q * m..(q + 1) * m];
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if gamma == 0.0
                    || alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut w, m, p, q, c, s);
                rotate_columns(&mut v, n, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(DeniseError::NoConvergence {
            routine: "one-sided jacobi svd",
            iterations: MAX_JACOBI_SWEEPS,
        });
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| w[j * m..(j + 1) * m].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let order = descending_order(&norms);
    let sigma_max = norms[order[0]];
    let floor = sigma_max * 1e-13 * (m as f64);

    let mut u = Matrix::zeros(m, n);
    let mut vv = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let s = norms[j];
        for i in 0..n {
            vv[(i, slot)] = v[j * n + i];
        }
        if s > floor && s > 0.0 {
            for i in 0..m {
                u[(i, slot)] = w[j * m + i] / s;
            }
            singular_values.push(s);
        } else {
            singular_values.push(if s > floor { s } else { 0.0 });
            missing.push(slot);
        }
    }
    complete_orthonormal(&mut u, &missing);
    Ok(Svd {
        u,
        singular_values,
        v: vv,
    })
}

#[inline]
fn rotate_columns(buf: &mut [f64], len: usize, p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = buf.split_at_mut(q * len);
    let cp = &mut head[p * len..(p + 1) * len];
    let cq = &mut tail[..len];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt against the standard basis).
fn complete_orthonormal(u: &mut Matrix, missing: &[usize]) {
    let m = u.rows();
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    let mut basis = 0usize;
    for &slot in missing {
        loop {
            assert!(basis < m, "ran out of basis vectors while completing U");
            let mut cand = vec![0.0; m];
            cand[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let dot: f64 = (0..m).map(|i| u[(i, j)] * cand[i]).sum();
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= dot * u[(i, j)];
                    }
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (i, c) in cand.iter().enumerate() {
                    u[(i, slot)] = c / norm;
                }
                filled.push(slot);
                break;
            }
        }
    }
}
