//! Plain dense vectors and row-major matrices sized for control problems
//! (state dimension ~4, control dimension ~1-2, mixture sizes ~2-8).

use super::{MathError, NumericPolicy};
use serde::{Deserialize, Serialize};
use std::ops::{Index, IndexMut};

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::new(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector::new(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector::new(self.data.iter().map(|a| a * c).collect())
    }

    /// `self += c * other`, in place.
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] += v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.at(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, v: &Vector) -> Result<Vector, MathError> {
        if v.len() != self.cols {
            return Err(MathError::Dimension(format!(
                "matvec: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = Vector::zeros(self.rows);
        for i in 0..self.rows {
            let mut s = 0.0;
            for j in 0..self.cols {
                s += self.at(i, j) * v[j];
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// `self^T v`.
    pub fn tr_matvec(&self, v: &Vector) -> Result<Vector, MathError> {
        if v.len() != self.rows {
            return Err(MathError::Dimension(format!(
                "tr_matvec: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = Vector::zeros(self.cols);
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.at(i, j) * v[i];
            }
            out[j] = s;
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, MathError> {
        if self.cols != other.rows {
            return Err(MathError::Dimension(format!(
                "matmul: {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.add_at(i, j, a * other.at(k, j));
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        out
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    /// Rank-one product `v w^T`.
    pub fn outer(v: &Vector, w: &Vector) -> Matrix {
        let mut m = Matrix::zeros(v.len(), w.len());
        for i in 0..v.len() {
            for j in 0..w.len() {
                m.set(i, j, v[i] * w[j]);
            }
        }
        m
    }

    /// `v^T self v` for square `self`.
    pub fn quad_form(&self, v: &Vector) -> Result<f64, MathError> {
        if self.rows != self.cols || v.len() != self.rows {
            return Err(MathError::Dimension(format!(
                "quad_form: {}x{} with vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut s = 0.0;
        for i in 0..self.rows {
            let mut row = 0.0;
            for j in 0..self.cols {
                row += self.at(i, j) * v[j];
            }
            s += v[i] * row;
        }
        Ok(s)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = 1.0 + self.max_abs_diag();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self.at(i, j) - self.at(j, i)).abs() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn max_abs_diag(&self) -> f64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.at(i, i).abs()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.abs()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Solve `self * x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Vector) -> Result<Vector, MathError> {
        if self.rows != self.cols {
            return Err(MathError::Dimension("solve: matrix not square".into()));
        }
        if b.len() != self.rows {
            return Err(MathError::Dimension("solve: rhs length mismatch".into()));
        }
        let n = self.rows;
        let mut a = self.data.clone();
        let mut x: Vec<f64> = b.as_slice().to_vec();
        for col in 0..n {
            let mut piv = col;
            let mut best = a[col * n + col].abs();
            for r in (col + 1)..n {
                let v = a[r * n + col].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best == 0.0 {
                return Err(MathError::Singular { det: 0.0 });
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                x.swap(col, piv);
            }
            let d = a[col * n + col];
            for r in (col + 1)..n {
                let f = a[r * n + col] / d;
                if f == 0.0 {
                    continue;
                }
                for j in col..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
                x[r] -= f * x[col];
            }
        }
        for col in (0..n).rev() {
            let mut s = x[col];
            for j in (col + 1)..n {
                s -= a[col * n + j] * x[j];
            }
            x[col] = s / a[col * n + col];
        }
        let out = Vector::new(x);
        if !out.all_finite() {
            return Err(MathError::Singular { det: 0.0 });
        }
        Ok(out)
    }

    /// Solve `self * x = b` for symmetric positive definite `self`, with a
    /// diagonal ridge retry if the factorization meets a bad pivot.
    pub fn solve_spd(&self, b: &Vector, policy: &NumericPolicy) -> Result<Vector, MathError> {
        match cholesky_psd(self, policy).and_then(|l| chol_solve(&l, b)) {
            Ok(x) => Ok(x),
            Err(_) => {
                let ridge = 1e-10 * (1.0 + self.max_abs_diag());
                let mut m = self.clone();
                for i in 0..m.rows {
                    m.add_at(i, i, ridge);
                }
                let l = cholesky_psd(&m, policy)?;
                chol_solve(&l, b)
            }
        }
    }
}

/// Forward/back substitution through a Cholesky factor `L` (lower
/// triangular): solves `L L^T x = b`. Zero diagonal entries (from PSD
/// rank-deficient factors) propagate zeros in the corresponding component.
pub(crate) fn chol_solve(l: &Matrix, b: &Vector) -> Result<Vector, MathError> {
    let n = l.rows();
    if b.len() != n {
        return Err(MathError::Dimension("chol_solve: rhs length".into()));
    }
    let mut y = Vector::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l.at(i, j) * y[j];
        }
        let d = l.at(i, i);
        y[i] = if d == 0.0 { 0.0 } else { s / d };
    }
    let mut x = Vector::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in (i + 1)..n {
            s -= l.at(j, i) * x[j];
        }
        let d = l.at(i, i);
        x[i] = if d == 0.0 { 0.0 } else { s / d };
    }
    Ok(x)
}

pub(crate) fn cholesky_psd(m: &Matrix, policy: &NumericPolicy) -> Result<Matrix, MathError> {
    if m.rows() != m.cols() {
        return Err(MathError::Dimension("cholesky: matrix not square".into()));
    }
    if !m.is_symmetric(1e-8) {
        return Err(MathError::Domain("cholesky: matrix not symmetric".into()));
    }
    let n = m.rows();
    let scale = m.max_abs_diag().max(1e-300);
    let tol = policy.psd_tol * scale;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m.at(j, j);
        for k in 0..j {
            d -= l.at(j, k) * l.at(j, k);
        }
        if d <= 0.0 {
            if d < -tol {
                return Err(MathError::NotPsd { pivot: d, index: j });
            }
            // Zero pivot: the matrix is rank deficient here. Zero the
            // column; any nonzero below-pivot entries are roundoff on a
            // PSD input.
            continue;
        }
        let dj = d.sqrt();
        l.set(j, j, dj);
        for i in (j + 1)..n {
            let mut s = m.at(i, j);
            for k in 0..j {
                s -= l.at(i, k) * l.at(j, k);
            }
            l.set(i, j, s / dj);
        }
    }
    Ok(l)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors in columns,
/// so `m = V diag(w) V^T`. Intended for the small matrices this crate
/// works with; iteration count grows with dimension.
pub(crate) fn sym_eigen(m: &Matrix) -> Result<(Vector, Matrix), MathError> {
    if m.rows() != m.cols() {
        return Err(MathError::Dimension("sym_eigen: matrix not square".into()));
    }
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + a.max_abs_diag()) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.at(k, p);
                    let akq = a.at(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.at(p, k);
                    let aqk = a.at(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let w = Vector::new((0..n).map(|i| a.at(i, i)).collect());
    Ok((w, v))
}
