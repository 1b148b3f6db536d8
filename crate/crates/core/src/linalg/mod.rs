//! Dense matrix/vector kernel: SVD, condition-capped pseudoinverse,
//! null-space bases, and damped normal-equation solves.
//!
//! Everything here is plain `f64` in row-major order. Operations are pure
//! functions of immutable inputs; nothing holds shared mutable state, so
//! concurrent use is safe. Shape mismatches inside the hot kernels are
//! programmer errors and panic; the public decomposition/solve entry points
//! validate their inputs and return [`LinalgError`].

mod svd;

use rayon::prelude::*;
use thiserror::Error;

/// Column vector: a plain `f64` buffer.
pub type Vector = Vec<f64>;

/// Relative cutoff below which a singular value counts as zero:
/// `sigma <= max(m, n) * sigma_1 * RANK_EPS` is treated as rank-deficient.
pub const RANK_EPS: f64 = 1e-12;

/// Work size (multiply-adds) above which matrix products fan out to rayon.
const PAR_WORK_THRESHOLD: usize = 1 << 17;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("data length {length} does not match {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize, length: usize },
    #[error("matrix or vector contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("SVD failed to converge after {sweeps} QR sweeps")]
    SvdNonConvergence { sweeps: usize },
    #[error("condition number is undefined for a rank-0 matrix")]
    UndefinedCondition,
    #[error("condition cap must be >= 1, got {cap}")]
    InvalidConditionCap { cap: f64 },
    #[error("damping parameter must be positive, got {mu}")]
    InvalidDamping { mu: f64 },
    #[error("linear solve failed: {reason}")]
    SolveFailure { reason: &'static str },
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::InvalidShape { rows, cols, length: data.len() });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Convenience constructor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        assert!(!rows.is_empty(), "matrix needs at least one row");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, j: usize) -> Vector {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn swap_columns(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    /// `A * x`.
    pub fn matvec(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `A^T * x`.
    pub fn matvec_transposed(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.rows, "matvec_transposed dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            axpy(x[i], self.row(i), &mut out);
        }
        out
    }

    /// `A * B`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        let compute_row = |i: usize, out_row: &mut [f64]| {
            for l in 0..k {
                axpy(self.get(i, l), other.row(l), out_row);
            }
        };
        if m * k * n >= PAR_WORK_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| compute_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                compute_row(i, row);
            }
        }
        out
    }

    /// `A * B^T`; both operands row-major, so every entry is a contiguous dot.
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt dimension mismatch");
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = Matrix::zeros(m, n);
        let compute_row = |i: usize, out_row: &mut [f64]| {
            for (j, val) in out_row.iter_mut().enumerate() {
                *val = dot(self.row(i), other.row(j));
            }
        };
        if m * k * n >= PAR_WORK_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| compute_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                compute_row(i, row);
            }
        }
        out
    }

    /// `A^T * B` where `A` is k x m and `B` is k x n.
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn dimension mismatch");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        let compute_row = |i: usize, out_row: &mut [f64]| {
            for l in 0..k {
                axpy(self.get(l, i), other.row(l), out_row);
            }
        };
        if m * k * n >= PAR_WORK_THRESHOLD {
            out.data
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(i, row)| compute_row(i, row));
        } else {
            for (i, row) in out.data.chunks_mut(n).enumerate() {
                compute_row(i, row);
            }
        }
        out
    }
}

/// Dot product with four independent accumulators. The fixed association
/// order keeps results bitwise reproducible while letting the backend
/// vectorize.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot length mismatch");
    let mut acc = [0.0f64; 4];
    let mut chunks_a = a.chunks_exact(4);
    let mut chunks_b = b.chunks_exact(4);
    for (ca, cb) in chunks_a.by_ref().zip(chunks_b.by_ref()) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Euclidean norm.
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Full singular value decomposition `W = U * diag(sigma) * V^T`.
///
/// `u` is m x m orthogonal, `v` is n x n orthogonal, and `sigma` holds the
/// min(m, n) singular values sorted descending. `rank` counts the singular
/// values above the numerical-zero cutoff `max(m, n) * sigma_1 * RANK_EPS`.
#[derive(Debug, Clone)]
pub struct SvdFactorization {
    u: Matrix,
    sigma: Vec<f64>,
    v: Matrix,
    rank: usize,
}

impl SvdFactorization {
    pub fn u(&self) -> &Matrix {
        &self.u
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Rows of the factored matrix.
    pub fn source_rows(&self) -> usize {
        self.u.rows()
    }

    /// Columns of the factored matrix.
    pub fn source_cols(&self) -> usize {
        self.v.rows()
    }

    /// `U * diag(sigma) * V^T`, for residual checks.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.source_rows();
        let n = self.source_cols();
        let mut scaled = Matrix::zeros(m, n);
        for j in 0..self.sigma.len() {
            for i in 0..m {
                scaled.set(i, j, self.u.get(i, j) * self.sigma[j]);
            }
        }
        scaled.matmul_nt(&self.v)
    }
}

/// Singular value decomposition of an arbitrary finite matrix.
///
/// Wide matrices are factored through their transpose, swapping the roles
/// of U and V, so the returned factors are always full square orthogonal
/// matrices.
pub fn svd(w: &Matrix) -> Result<SvdFactorization, LinalgError> {
    if w.rows() == 0 || w.cols() == 0 {
        return Err(LinalgError::InvalidShape { rows: w.rows(), cols: w.cols(), length: w.data().len() });
    }
    if !w.is_finite() {
        return Err(LinalgError::NonFinite);
    }

    let (u, sigma, v) = if w.rows() >= w.cols() {
        svd::decompose_tall(w)?
    } else {
        let (ut, sigma, vt) = svd::decompose_tall(&w.transpose())?;
        (vt, sigma, ut)
    };

    let cutoff = (w.rows().max(w.cols())) as f64 * sigma.first().copied().unwrap_or(0.0) * RANK_EPS;
    let rank = sigma.iter().filter(|&&s| s > cutoff).count();

    Ok(SvdFactorization { u, sigma, v, rank })
}

/// Ratio of the largest singular value to the smallest one counted in the
/// numerical rank.
pub fn condition_number(f: &SvdFactorization) -> Result<f64, LinalgError> {
    if f.rank == 0 {
        return Err(LinalgError::UndefinedCondition);
    }
    Ok(f.sigma[0] / f.sigma[f.rank - 1])
}

/// Moore-Penrose pseudoinverse with condition capping.
///
/// Inverts only the singular values with `sigma_1 / sigma_j <= cond_cap`;
/// the rest are treated as zero, so the effective condition number of the
/// result never exceeds the cap. A zero matrix comes back when every
/// singular value is zero, signalling a degenerate layer.
pub fn pseudoinverse_capped(f: &SvdFactorization, cond_cap: f64) -> Result<Matrix, LinalgError> {
    if !(cond_cap >= 1.0) {
        return Err(LinalgError::InvalidConditionCap { cap: cond_cap });
    }
    let m = f.source_rows();
    let n = f.source_cols();
    let mut out = Matrix::zeros(n, m);
    if f.rank == 0 {
        return Ok(out);
    }
    let sigma_1 = f.sigma[0];
    for j in 0..f.rank.min(f.sigma.len()) {
        let s = f.sigma[j];
        if sigma_1 / s > cond_cap {
            continue;
        }
        let inv = 1.0 / s;
        // out += inv * v_j * u_j^T
        for i in 0..n {
            let scale = inv * f.v.get(i, j);
            if scale == 0.0 {
                continue;
            }
            for l in 0..m {
                let val = out.get(i, l) + scale * f.u.get(l, j);
                out.set(i, l, val);
            }
        }
    }
    Ok(out)
}

/// Orthonormal basis of the null space: the right-singular vectors whose
/// singular values fall below the numerical-rank cutoff. Empty (zero
/// columns) for full-rank matrices.
pub fn null_space_basis(f: &SvdFactorization) -> Matrix {
    let n = f.source_cols();
    let dim = n - f.rank;
    let mut basis = Matrix::zeros(n, dim);
    for (col, j) in (f.rank..n).enumerate() {
        for i in 0..n {
            basis.set(i, col, f.v.get(i, j));
        }
    }
    basis
}

/// Right-singular vectors that are inside the numerical rank but whose
/// singular values would be dropped by condition capping at `cond_cap`.
/// Together with [`null_space_basis`] these span every input direction the
/// capped pseudoinverse cannot reconstruct.
pub fn cap_truncated_directions(f: &SvdFactorization, cond_cap: f64) -> Matrix {
    let n = f.source_cols();
    if f.rank == 0 {
        return Matrix::zeros(n, 0);
    }
    let sigma_1 = f.sigma[0];
    let truncated: Vec<usize> = (0..f.rank)
        .filter(|&j| sigma_1 / f.sigma[j] > cond_cap)
        .collect();
    let mut basis = Matrix::zeros(n, truncated.len());
    for (col, &j) in truncated.iter().enumerate() {
        for i in 0..n {
            basis.set(i, col, f.v.get(i, j));
        }
    }
    basis
}

/// Solves the damped normal equations `(J^T J + mu I) delta = -J^T r`.
///
/// For wide Jacobians the solve runs in the residual space via the
/// identity `(J^T J + mu I)^{-1} J^T = J^T (J J^T + mu I)^{-1}`, keeping the
/// Cholesky factorization at the smaller of the two dimensions.
pub fn solve_normal_damped(j: &Matrix, r: &[f64], mu: f64) -> Result<Vector, LinalgError> {
    if r.len() != j.rows() {
        return Err(LinalgError::DimensionMismatch { expected: j.rows(), got: r.len() });
    }
    if !(mu > 0.0) {
        return Err(LinalgError::InvalidDamping { mu });
    }
    if !j.is_finite() || !r.iter().all(|x| x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }

    let c = j.rows();
    let d = j.cols();
    if d <= c {
        // (J^T J + mu I) delta = -J^T r directly.
        let mut a = j.matmul_tn(j);
        for i in 0..d {
            let val = a.get(i, i) + mu;
            a.set(i, i, val);
        }
        let mut rhs = j.matvec_transposed(r);
        for x in &mut rhs {
            *x = -*x;
        }
        cholesky_solve(&mut a, &mut rhs)?;
        Ok(rhs)
    } else {
        // delta = -J^T (J J^T + mu I)^{-1} r.
        let mut a = j.matmul_nt(j);
        for i in 0..c {
            let val = a.get(i, i) + mu;
            a.set(i, i, val);
        }
        let mut w = r.to_vec();
        cholesky_solve(&mut a, &mut w)?;
        let mut delta = j.matvec_transposed(&w);
        for x in &mut delta {
            *x = -*x;
        }
        Ok(delta)
    }
}

/// In-place Cholesky solve of a symmetric positive definite system.
fn cholesky_solve(a: &mut Matrix, b: &mut [f64]) -> Result<(), LinalgError> {
    let n = a.rows();
    debug_assert_eq!(a.cols(), n);
    debug_assert_eq!(b.len(), n);

    // Factor A = L L^T, storing L in the lower triangle.
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= a.get(i, k) * a.get(j, k);
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(LinalgError::SolveFailure { reason: "matrix not positive definite" });
                }
                a.set(i, j, sum.sqrt());
            } else {
                a.set(i, j, sum / a.get(j, j));
            }
        }
    }
    // Forward substitution L y = b.
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a.get(i, k) * b[k];
        }
        b[i] = sum / a.get(i, i);
    }
    // Back substitution L^T x = y.
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in (i + 1)..n {
            sum -= a.get(k, i) * b[k];
        }
        b[i] = sum / a.get(i, i);
    }
    Ok(())
}
