//! Dense row-major matrices and the symmetric positive-definite kernels
//! everything else is built on: Cholesky with a jitter ladder, log-determinants,
//! triangular solves and symmetric rank-one updates.

use std::cell::Cell;
use std::fmt;
use std::ops::{Index, IndexMut};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("matrix is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite even with jitter {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("non-finite entry encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Dense matrix of `f64` in row-major order.
///
/// Zero-sized shapes are allowed so that an empty context batch (N = 0) is
/// representable.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, 1.0)
    }

    pub fn scaled_identity(n: usize, value: f64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = value;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "from_vec: length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "from_rows: ragged input");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::from_vec(1, values.len(), values.to_vec())
    }

    pub fn column_vector(values: &[f64]) -> Self {
        Self::from_vec(values.len(), 1, values.to_vec())
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_vec(1, 1, vec![value])
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn row_matrix(&self, r: usize) -> Matrix {
        Matrix::row_vector(self.row(r))
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar matrix");
        self.data[0]
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.rows,
            "matmul: {:?} x {:?}",
            self.shape(),
            rhs.shape()
        );
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out.data[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs` without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.rows, rhs.rows,
            "t_matmul: {:?}ᵀ x {:?}",
            self.shape(),
            rhs.shape()
        );
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut out = Matrix::zeros(k, m);
        for r in 0..n {
            let a_row = &self.data[r * k..(r + 1) * k];
            let b_row = &rhs.data[r * m..(r + 1) * m];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let o_row = &mut out.data[i * m..(i + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, rhs.cols,
            "matmul_t: {:?} x {:?}ᵀ",
            self.shape(),
            rhs.shape()
        );
        let (n, k, m) = (self.rows, self.cols, rhs.rows);
        let mut out = Matrix::zeros(n, m);
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b_row = &rhs.data[j * k..(j + 1) * k];
                out.data[i * m + j] = dot(a_row, b_row);
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn hadamard(&self, rhs: &Matrix) -> Matrix {
        self.zip_with(rhs, |a, b| a * b)
    }

    pub fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.shape(), rhs.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }

    /// `self += alpha * rhs`
    pub fn axpy(&mut self, alpha: f64, rhs: &Matrix) {
        assert_eq!(self.shape(), rhs.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, rhs: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "elementwise op shape mismatch {:?} vs {:?}",
            self.shape(),
            rhs.shape()
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square(), "trace of non-square matrix");
        (0..self.rows).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Largest |A - Aᵀ| entry.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix with `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize of non-square matrix");
        let n = self.rows;
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
                self.data[i * n + j] = avg;
                self.data[j * n + i] = avg;
            }
        }
    }

    pub fn symmetrized(mut self) -> Matrix {
        self.symmetrize();
        self
    }

    /// Horizontal concatenation; all parts must share a row count.
    pub fn hstack(parts: &[&Matrix]) -> Matrix {
        let rows = parts.first().map_or(0, |p| p.rows);
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                assert_eq!(p.rows, rows, "hstack: row count mismatch");
                out.data[r * cols + offset..r * cols + offset + p.cols].copy_from_slice(p.row(r));
                offset += p.cols;
            }
        }
        out
    }

    /// Vertical concatenation; all parts must share a column count.
    pub fn vstack(parts: &[&Matrix]) -> Matrix {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "vstack: column count mismatch");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Matrix { rows, cols, data }
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        if self.rows == 0 && self.cols == 0 {
            self.cols = row.len();
        }
        assert_eq!(row.len(), self.cols, "push_row: width mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    /// Lower triangle including the diagonal, read row by row.
    pub fn lower_triangle(&self) -> Vec<f64> {
        assert!(self.is_square(), "lower_triangle of non-square matrix");
        let n = self.rows;
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            out.extend_from_slice(&self.data[i * n..i * n + i + 1]);
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl serde::Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("Matrix", 3)?;
        st.serialize_field("rows", &self.rows())?;
        st.serialize_field("cols", &self.cols())?;
        st.serialize_field("data", self.as_slice())?;
        st.end()
    }
}

impl<'de> serde::Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Raw {
            rows: usize,
            cols: usize,
            data: Vec<f64>,
        }
        let raw = <Raw as serde::Deserialize>::deserialize(de)?;
        if raw.rows * raw.cols != raw.data.len() {
            return Err(serde::de::Error::custom("matrix data length does not match shape"));
        }
        Ok(Matrix::from_vec(raw.rows, raw.cols, raw.data))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jitter values tried in order when a plain factorization fails.
#[derive(Debug, Clone, PartialEq)]
pub struct JitterPolicy {
    pub ladder: Vec<f64>,
    /// Symmetry tolerance, relative to `max(1, max |a_ij|)`.
    pub symmetry_tol: f64,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        Self {
            ladder: vec![1e-10, 1e-8, 1e-6],
            symmetry_tol: 1e-8,
        }
    }
}

impl JitterPolicy {
    pub fn none() -> Self {
        Self {
            ladder: Vec::new(),
            ..Self::default()
        }
    }
}

thread_local! {
    static CHOLESKY_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of Cholesky factorizations attempted on the current thread.
pub fn cholesky_call_count() -> u64 {
    CHOLESKY_CALLS.with(|c| c.get())
}

/// Lower-triangular factor `L` with `L Lᵀ = A + jitter·I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    l: Matrix,
    jitter: f64,
}

impl Cholesky {
    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.rows
    }

    /// Diagonal jitter that had to be added; zero when the plain factorization succeeded.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `log |A|` as `2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix> {
        let n = self.dim();
        if b.rows != n {
            return Err(LinalgError::DimensionMismatch {
                op: "solve_pd",
                lhs: (n, n),
                rhs: b.shape(),
            });
        }
        let m = b.cols;
        let l = &self.l.data;
        let mut x = b.clone();
        // forward: L Z = B
        for i in 0..n {
            for k in 0..i {
                let lik = l[i * n + k];
                if lik != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= lik * x.data[k * m + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..m {
                x.data[i * m + c] /= d;
            }
        }
        // backward: Lᵀ X = Z
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let lki = l[k * n + i];
                if lki != 0.0 {
                    for c in 0..m {
                        x.data[i * m + c] -= lki * x.data[k * m + c];
                    }
                }
            }
            let d = l[i * n + i];
            for c in 0..m {
                x.data[i * m + c] /= d;
            }
        }
        Ok(x)
    }

    /// `A⁻¹`, symmetrized.
    pub fn inverse(&self) -> Matrix {
        self.solve(&Matrix::identity(self.dim()))
            .expect("identity has matching rows")
            .symmetrized()
    }

    /// Solves `L Z = B` only (forward substitution).
    pub fn solve_lower(&self, b: &Matrix) -> Matrix {
        let n = self.dim();
        assert_eq!(b.rows, n, "solve_lower: row mismatch");
        let m = b.cols;
        let mut x = b.clone();
        for i in 0..n {
            for k in 0..i {
                let lik = self.l[(i, k)];
                for c in 0..m {
                    x.data[i * m + c] -= lik * x.data[k * m + c];
                }
            }
            let d = self.l[(i, i)];
            for c in 0..m {
                x.data[i * m + c] /= d;
            }
        }
        x
    }
}

fn try_factor(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut diag = a[(j, j)] + jitter;
        diag -= dot(&l.data[j * n..j * n + j], &l.data[j * n..j * n + j]);
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let s = a[(i, j)] - dot(&l.data[i * n..i * n + j], &l.data[j * n..j * n + j]);
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Cholesky factorization of a symmetric matrix.
///
/// The plain factorization is tried first; on failure each rung of the jitter
/// ladder is added to the diagonal in turn. The jitter that succeeded is kept
/// on the returned factor.
pub fn cholesky(a: &Matrix, policy: &JitterPolicy) -> Result<Cholesky> {
    CHOLESKY_CALLS.with(|c| c.set(c.get() + 1));
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.rows, a.cols));
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let asym = a.asymmetry();
    let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if asym > policy.symmetry_tol * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    if let Some(l) = try_factor(a, 0.0) {
        return Ok(Cholesky { l, jitter: 0.0 });
    }
    for &jitter in &policy.ladder {
        if let Some(l) = try_factor(a, jitter) {
            return Ok(Cholesky { l, jitter });
        }
    }
    Err(LinalgError::NotPositiveDefinite {
        max_jitter: policy.ladder.last().copied().unwrap_or(0.0),
    })
}

/// Shorthand for [`Cholesky::logdet`].
pub fn logdet_pd(f: &Cholesky) -> f64 {
    f.logdet()
}

/// Shorthand for [`Cholesky::solve`].
pub fn solve_pd(f: &Cholesky, b: &Matrix) -> Result<Matrix> {
    f.solve(b)
}

/// `A + sign · vᵀv` for a row vector `v`. A symmetric `A` stays bitwise
/// symmetric because each entry adds `sign · (v_i v_j)`.
pub fn sym_rank_update(a: &Matrix, v: &[f64], sign: f64) -> Matrix {
    let mut out = a.clone();
    sym_rank_update_in_place(&mut out, v, sign);
    out
}

pub fn sym_rank_update_in_place(a: &mut Matrix, v: &[f64], sign: f64) {
    let n = a.rows;
    assert_eq!(a.cols, n, "sym_rank_update on non-square matrix");
    assert_eq!(v.len(), n, "sym_rank_update: vector length mismatch");
    for i in 0..n {
        let vi = v[i];
        if vi == 0.0 {
            continue;
        }
        let row = &mut a.data[i * n..(i + 1) * n];
        for (x, &vj) in row.iter_mut().zip(v) {
            *x += sign * (vi * vj);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize, seed: u64) -> Matrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect());
        b.t_matmul(&b).add(&Matrix::scaled_identity(n, 0.5))
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = cholesky(&Matrix::identity(3), &JitterPolicy::default()).unwrap();
        assert_eq!(f.factor(), &Matrix::identity(3));
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn two_by_two_factor() {
        let a = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let l = f.factor();
        assert!((l[(0, 0)] - 2.0).abs() < 1e-15);
        assert_eq!(l[(0, 1)], 0.0);
        assert!((l[(1, 0)] - 1.0).abs() < 1e-15);
        assert!((l[(1, 1)] - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn singular_needs_jitter() {
        let a = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]);
        assert!(cholesky(&a, &JitterPolicy::none()).is_err());
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        assert!(f.jitter() > 0.0);
        let recon = f.factor().matmul_t(f.factor());
        let target = a.add(&Matrix::scaled_identity(2, f.jitter()));
        assert!(recon.max_abs_diff(&target) < 1e-12);
    }

    #[test]
    fn indefinite_fails_at_max_jitter() {
        let a = Matrix::diag(&[1.0, -1.0]);
        assert_eq!(
            cholesky(&a, &JitterPolicy::default()),
            Err(LinalgError::NotPositiveDefinite { max_jitter: 1e-6 })
        );
    }

    #[test]
    fn asymmetric_input_rejected() {
        let a = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, 2.0]]);
        assert!(matches!(
            cholesky(&a, &JitterPolicy::default()),
            Err(LinalgError::NotSymmetric(_))
        ));
    }

    #[test]
    fn logdet_examples() {
        let p = JitterPolicy::default();
        assert_eq!(logdet_pd(&cholesky(&Matrix::identity(5), &p).unwrap()), 0.0);
        let v = logdet_pd(&cholesky(&Matrix::diag(&[2.0, 2.0]), &p).unwrap());
        assert!((v - 2.0 * 2f64.ln()).abs() < 1e-14);
        let v = logdet_pd(&cholesky(&Matrix::scaled_identity(7, 3.5), &p).unwrap());
        assert!((v - 7.0 * 3.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn solve_examples() {
        let p = JitterPolicy::default();
        let b = Matrix::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let f = cholesky(&Matrix::identity(2), &p).unwrap();
        assert_eq!(solve_pd(&f, &b).unwrap(), b);

        let a = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]);
        let f = cholesky(&a, &p).unwrap();
        let x = solve_pd(&f, &Matrix::column_vector(&[2.0, 3.0])).unwrap();
        assert!(x.max_abs_diff(&Matrix::column_vector(&[0.0, 1.0])) < 1e-14);

        assert!(matches!(
            solve_pd(&f, &Matrix::zeros(3, 1)),
            Err(LinalgError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn solve_round_trip() {
        let a = spd(12, 3);
        let x_star = Matrix::from_vec(12, 3, (0..36).map(|i| (i as f64).sin()).collect());
        let f = cholesky(&a, &JitterPolicy::default()).unwrap();
        let x = f.solve(&a.matmul(&x_star)).unwrap();
        assert!(x.max_abs_diff(&x_star) < 1e-8);
    }

    #[test]
    fn rank_update_examples() {
        let a = sym_rank_update(&Matrix::identity(2), &[1.0, 0.0], 1.0);
        assert_eq!(a, Matrix::diag(&[2.0, 1.0]));
        let b = sym_rank_update(&a, &[1.0, 0.0], -1.0);
        assert_eq!(b, Matrix::identity(2));
    }

    #[test]
    fn rank_update_round_trip_and_symmetry() {
        let a = spd(9, 11);
        let v: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).cos()).collect();
        let up = sym_rank_update(&a, &v, 1.0);
        assert_eq!(up.asymmetry(), 0.0);
        let down = sym_rank_update(&up, &v, -1.0);
        assert_eq!(down.asymmetry(), 0.0);
        assert!(down.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn products_agree() {
        let a = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 - 5.0).collect());
        let b = Matrix::from_vec(3, 2, (0..6).map(|i| (i as f64).sqrt()).collect());
        assert!(a.t_matmul(&b).max_abs_diff(&a.transpose().matmul(&b)) < 1e-12);
        let c = Matrix::from_vec(5, 4, (0..20).map(|i| (i as f64).cos()).collect());
        assert!(a.matmul_t(&c).max_abs_diff(&a.matmul(&c.transpose())) < 1e-12);
    }

    #[test]
    fn lower_triangle_order() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        assert_eq!(a.lower_triangle(), vec![1.0, 4.0, 5.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn empty_shapes_are_valid() {
        let c = Matrix::zeros(0, 4);
        let ctc = c.t_matmul(&c);
        assert_eq!(ctc, Matrix::zeros(4, 4));
        assert_eq!(Matrix::hstack(&[&Matrix::zeros(0, 2), &Matrix::zeros(0, 3)]).shape(), (0, 5));
    }
}
