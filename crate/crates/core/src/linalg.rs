//! Dense row-major matrices and a Cholesky factorization, just enough for the
//! regression head. Sizes here are the basis width (tens), so nothing is blocked.

use serde::{Deserialize, Serialize};

use crate::scalar::{dot, Scalar};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from row-major data. Panics if `data.len() != rows * cols`.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    /// Builds a matrix from a list of equal-length rows. `cols` is used when
    /// `rows` is empty.
    pub fn from_rows(rows: &[Vec<T>], cols: usize) -> Self {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
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
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact(0) panics, so zero-width matrices iterate over empty slices.
        (0..self.rows).map(move |r| self.row(r))
    }

    /// `Aᵀ A`, accumulated row by row.
    pub fn gram(&self) -> Matrix<T> {
        let n = self.cols;
        let mut g = Matrix::zeros(n, n);
        for r in self.iter_rows() {
            for i in 0..n {
                let ri = r[i];
                if ri == T::zero() {
                    continue;
                }
                let gi = g.row_mut(i);
                for j in 0..=i {
                    gi[j] += ri * r[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                g[(j, i)] = g[(i, j)];
            }
        }
        g
    }

    /// `Aᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &vr) in self.iter_rows().zip(v) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x * vr;
            }
        }
        out
    }

    /// `A v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        self.iter_rows().map(|r| dot(r, v)).collect()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Appends one row. Panics on width mismatch.
    pub fn push_row(&mut self, row: &[T]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factorizes a symmetric matrix, reading only its lower triangle.
    /// Returns `None` if a pivot is not strictly positive.
    pub fn decompose(a: &Matrix<T>) -> Option<Self> {
        assert_eq!(a.rows(), a.cols(), "Cholesky needs a square matrix");
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { lower: l })
    }

    /// Wraps an existing lower-triangular factor (e.g. one read back from disk).
    pub fn from_lower(lower: Matrix<T>) -> Self {
        assert_eq!(lower.rows(), lower.cols());
        Self { lower }
    }

    pub fn dim(&self) -> usize {
        self.lower.rows()
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    /// Solves `L z = b`.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= l[(i, k)] * z[k];
            }
            z[i] = s / l[(i, i)];
        }
        z
    }

    /// Solves `Lᵀ x = z`.
    pub fn solve_upper(&self, z: &[T]) -> Vec<T> {
        let n = self.dim();
        assert_eq!(z.len(), n);
        let l = &self.lower;
        let mut x = z.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `log |A|`.
    pub fn log_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.dim())
            .map(|i| self.lower[(i, i)].ln())
            .sum::<T>()
            * two
    }

    /// `vᵀ A⁻¹ v = ‖L⁻¹ v‖²`, never negative.
    pub fn inv_quad_form(&self, v: &[T]) -> T {
        let z = self.solve_lower(v);
        dot(&z, &z)
    }

    /// `tr(A⁻¹) = ‖L⁻¹‖_F²`.
    pub fn inverse_trace(&self) -> T {
        let n = self.dim();
        let l = &self.lower;
        let mut total = T::zero();
        // Column c of L⁻¹ is zero above the diagonal.
        let mut col = vec![T::zero(); n];
        for c in 0..n {
            col.iter_mut().for_each(|x| *x = T::zero());
            for i in c..n {
                let mut s = if i == c { T::one() } else { T::zero() };
                for k in c..i {
                    s -= l[(i, k)] * col[k];
                }
                col[i] = s / l[(i, i)];
                total += col[i] * col[i];
            }
        }
        total
    }

    /// In-place update to the factor of `A + v vᵀ`.
    pub fn rank_one_update(&mut self, v: &[T]) {
        let n = self.dim();
        assert_eq!(v.len(), n);
        let mut x = v.to_vec();
        let l = &mut self.lower;
        for k in 0..n {
            let lkk = l[(k, k)];
            let r = lkk.hypot(x[k]);
            let c = r / lkk;
            let s = x[k] / lkk;
            l[(k, k)] = r;
            for i in (k + 1)..n {
                let lik = (l[(i, k)] + s * x[i]) / c;
                x[i] = c * x[i] - s * lik;
                l[(i, k)] = lik;
            }
        }
    }

    /// Reconstructs `L Lᵀ`.
    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.dim();
        let l = &self.lower;
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let s = dot(&l.row(i)[..=j], &l.row(j)[..=j]);
                a[(i, j)] = s;
                a[(j, i)] = s;
            }
        }
        a
    }
}
