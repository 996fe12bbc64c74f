//! Minimal dense kernel: row-major matrices, LU with partial pivoting,
//! triangular solves, and norms.
//!
//! Sizes here are a few hundred at most and the call sites need exact control
//! over pivoting, conditioning reports, and operation order (results must be
//! reproducible bit for bit across runs and thread counts), so this is
//! written out rather than pulled in.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum LinalgError {
    /// An exactly zero pivot; the system is singular to working precision in
    /// the strictest sense. Near-singular systems factor fine and are
    /// reported through [`Lu::rcond_1`] instead.
    SingularPivot { step: usize },
    ShapeMismatch { expect: String, got: String },
}

impl std::fmt::Display for LinalgError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinalgError::SingularPivot { step } => {
                write!(f, "exact zero pivot at elimination step {step}")
            }
            LinalgError::ShapeMismatch { expect, got } => {
                write!(f, "shape mismatch: expected {expect}, got {got}")
            }
        }
    }
}

impl std::error::Error for LinalgError {}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> DMat<T> {
        DMat {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> DMat<T> {
        let mut m = DMat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> DMat<T> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        DMat { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> DMat<T> {
        let r = rows.len();
        let c = rows.first().map_or(0, |v| v.len());
        assert!(rows.iter().all(|v| v.len() == c), "ragged rows");
        DMat {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<T>) -> DMat<T> {
        assert_eq!(data.len(), rows * cols, "flat data length mismatch");
        DMat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> DMat<T> {
        DMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Conjugate transpose; plain transpose over the reals.
    pub fn herm_transpose(&self) -> DMat<T> {
        DMat::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols, "matvec shape");
        let mut y = vec![T::ZERO; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = T::ZERO;
            for (a, b) in row.iter().zip(x) {
                acc += *a * *b;
            }
            y[i] = acc;
        }
        y
    }

    /// y = A^H x without forming the transpose.
    pub fn matvec_herm(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.rows, "matvec_herm shape");
        let mut y = vec![T::ZERO; self.cols];
        for i in 0..self.rows {
            let row = self.row(i);
            let xi = x[i];
            for (j, a) in row.iter().enumerate() {
                y[j] += a.conj() * xi;
            }
        }
        y
    }

    pub fn matmul(&self, other: &DMat<T>) -> DMat<T> {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = DMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == T::ZERO {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(i);
                for (j, b) in orow.iter().enumerate() {
                    out_row[j] += aik * *b;
                }
            }
        }
        out
    }

    /// self += c * other, entry by entry.
    pub fn axpy(&mut self, c: T, other: &DMat<T>) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "axpy shape"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * *b;
        }
    }

    pub fn scale_in_place(&mut self, c: T) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Column-sum norm.
    pub fn norm_1(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let s: f64 = (0..self.rows).map(|i| self[(i, j)].abs()).sum();
            best = best.max(s);
        }
        best
    }

    /// Plain single-pass Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.abs_sq()).sum::<f64>().sqrt()
    }

    /// Overflow-safe Frobenius norm: scales by the largest modulus first and
    /// accumulates with a compensated sum. Used to guard error reports where
    /// quantities span many orders of magnitude.
    pub fn frobenius_compensated(&self) -> f64 {
        let scale = self.max_abs();
        if scale == 0.0 || !scale.is_finite() {
            return if scale == 0.0 { 0.0 } else { f64::INFINITY };
        }
        let inv = 1.0 / scale;
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for v in &self.data {
            let t = v.scale(inv).abs_sq();
            let s = sum + t;
            // Neumaier update keeps the low-order part regardless of which
            // addend dominates.
            if sum.abs() >= t.abs() {
                comp += (sum - s) + t;
            } else {
                comp += (t - s) + sum;
            }
            sum = s;
        }
        scale * (sum + comp).sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> std::ops::Index<(usize, usize)> for DMat<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T: Scalar> std::ops::IndexMut<(usize, usize)> for DMat<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// ||a - b||_F / ||b||_F with the compensated norm; returns the absolute
/// norm when b is exactly zero.
pub fn rel_frobenius_diff<T: Scalar>(a: &DMat<T>, b: &DMat<T>) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()), "diff shape");
    let mut d = a.clone();
    d.axpy(-T::ONE, b);
    let num = d.frobenius_compensated();
    let den = b.frobenius_compensated();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// sum_i conj(a_i) b_i.
pub fn conj_dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dot shape");
    let mut acc = T::ZERO;
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * *y;
    }
    acc
}

pub fn norm_2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.abs_sq()).sum::<f64>().sqrt()
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    assert_eq!(a.len(), b.len(), "diff shape");
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(0.0, f64::max)
}

/// Solve L x = v where L is unit lower triangular and only entries below the
/// diagonal are read.
pub fn solve_unit_lower<T: Scalar>(l: &DMat<T>, v: &[T]) -> Vec<T> {
    let n = v.len();
    assert!(l.rows() >= n && l.cols() >= n, "triangular shape");
    let mut x = vec![T::ZERO; n];
    for i in 0..n {
        let mut acc = v[i];
        for j in 0..i {
            acc -= l[(i, j)] * x[j];
        }
        x[i] = acc;
    }
    x
}

/// Solve U x = v where U is upper triangular with nonzero diagonal.
pub fn solve_upper<T: Scalar>(u: &DMat<T>, v: &[T]) -> Result<Vec<T>, LinalgError> {
    let n = v.len();
    assert!(u.rows() >= n && u.cols() >= n, "triangular shape");
    let mut x = vec![T::ZERO; n];
    for i in (0..n).rev() {
        let mut acc = v[i];
        for j in i + 1..n {
            acc -= u[(i, j)] * x[j];
        }
        let d = u[(i, i)];
        if d == T::ZERO {
            return Err(LinalgError::SingularPivot { step: i });
        }
        x[i] = acc / d;
    }
    Ok(x)
}

/// Invert an upper triangular matrix by back substitution on unit vectors.
pub fn invert_upper<T: Scalar>(u: &DMat<T>) -> Result<DMat<T>, LinalgError> {
    let n = u.rows();
    assert_eq!(n, u.cols(), "square");
    let mut inv = DMat::zeros(n, n);
    let mut e = vec![T::ZERO; n];
    for k in 0..n {
        e[k] = T::ONE;
        let x = solve_upper(u, &e)?;
        e[k] = T::ZERO;
        for i in 0..n {
            inv[(i, k)] = x[i];
        }
    }
    Ok(inv)
}

/// LU factorization with partial pivoting. Fails only on an exactly zero
/// pivot; conditioning is the caller's concern via [`Lu::rcond_1`].
#[derive(Debug, Clone)]
pub struct Lu<T> {
    lu: DMat<T>,
    perm: Vec<usize>,
    norm1_a: f64,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &DMat<T>) -> Result<Lu<T>, LinalgError> {
        let n = a.rows();
        if n != a.cols() {
            return Err(LinalgError::ShapeMismatch {
                expect: format!("{n}x{n}"),
                got: format!("{}x{}", a.rows(), a.cols()),
            });
        }
        let norm1_a = a.norm_1();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            // Largest pivot wins; ties keep the lowest row for determinism.
            let mut best_row = k;
            let mut best_val = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best_val {
                    best_val = v;
                    best_row = i;
                }
            }
            if best_val == 0.0 {
                return Err(LinalgError::SingularPivot { step: k });
            }
            if best_row != k {
                perm.swap(k, best_row);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(best_row, j)];
                    lu[(best_row, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            // Copy the pivot row tail once so the update below runs on plain
            // slices; the compiler vectorizes this form.
            let pivot_tail: Vec<T> = lu.row(k)[k + 1..].to_vec();
            for i in k + 1..n {
                let m = lu[(i, k)] / pivot;
                lu[(i, k)] = m;
                if m == T::ZERO {
                    continue;
                }
                let row_i = &mut lu.row_mut(i)[k + 1..];
                for (a, p) in row_i.iter_mut().zip(&pivot_tail) {
                    *a -= m * *p;
                }
            }
        }
        Ok(Lu { lu, perm, norm1_a })
    }

    pub fn n(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n();
        assert_eq!(b.len(), n, "solve shape");
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= self.lu[(i, j)] * x[j];
            }
            x[i] = acc / self.lu[(i, i)];
        }
        x
    }

    /// Exact reciprocal 1-norm condition number via n unit-vector solves of
    /// the factored system. Cubic cost is irrelevant at the sizes involved
    /// and avoids estimator noise in reports.
    pub fn rcond_1(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 1.0;
        }
        let mut inv_norm = 0.0f64;
        let mut e = vec![T::ZERO; n];
        for k in 0..n {
            e[k] = T::ONE;
            let x = self.solve(&e);
            e[k] = T::ZERO;
            let s: f64 = x.iter().map(|v| v.abs()).sum();
            inv_norm = inv_norm.max(s);
        }
        if inv_norm == 0.0 || self.norm1_a == 0.0 {
            return 0.0;
        }
        1.0 / (self.norm1_a * inv_norm)
    }
}

/// Convenience one-shot dense solve.
pub fn solve_dense<T: Scalar>(a: &DMat<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    Ok(Lu::factor(a)?.solve(b))
}
