//! Small dense row-major matrix with the handful of factorizations the
//! solvers need. Designs here are tall and narrow (K rarely above ~30), so
//! nothing fancier than partial pivoting is warranted.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
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

    /// Builds a matrix from row-major data. Panics if the length is not `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Appends a column of ones on the left.
    pub fn with_intercept(&self) -> Self {
        Self::from_fn(self.rows, self.cols + 1, |i, j| {
            if j == 0 {
                T::one()
            } else {
                self[(i, j - 1)]
            }
        })
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        self.rows_iter().map(|r| dot(r, v)).collect()
    }

    /// `vᵀ · self`
    pub fn vec_mul(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (r, &w) in self.rows_iter().zip(v) {
            if w != T::zero() {
                for (o, &x) in out.iter_mut().zip(r) {
                    *o += w * x;
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inverse of a square matrix by Gauss-Jordan elimination with partial
    /// pivoting. Returns `None` when a pivot falls below `tol` times the
    /// largest absolute entry.
    pub fn inverse(&self, tol: T) -> Option<Self> {
        assert_eq!(self.rows, self.cols, "inverse of non-square matrix");
        let n = self.rows;
        let scale = self
            .data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
        if scale == T::zero() || !scale.is_finite() {
            return None;
        }
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        for col in 0..n {
            let (piv, pmax) = (col..n)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((col, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= tol * scale {
                return None;
            }
            if piv != col {
                a.swap_rows(piv, col);
                inv.swap_rows(piv, col);
            }
            let p = a[(col, col)];
            for j in 0..n {
                a[(col, j)] /= p;
                inv[(col, j)] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[(r, col)];
                if f == T::zero() {
                    continue;
                }
                for j in 0..n {
                    let (ac, ic) = (a[(col, j)], inv[(col, j)]);
                    a[(r, j)] -= f * ac;
                    inv[(r, j)] -= f * ic;
                }
            }
        }
        Some(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Picks `K = rows[0].len()` rows forming a nonsingular square submatrix by
/// Gaussian elimination with row pivoting (largest remaining entry per column).
///
/// Returns positions into `rows`, or `None` when the rows span fewer than K
/// dimensions relative to `tol`.
pub fn independent_rows<T: Real>(rows: &[&[T]], tol: T) -> Option<Vec<usize>> {
    let n = rows.len();
    let k = rows.first().map_or(0, |r| r.len());
    if n < k {
        return None;
    }
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
    if k > 0 && (scale == T::zero() || !scale.is_finite()) {
        return None;
    }
    let mut work: Vec<Vec<T>> = rows.iter().map(|r| r.to_vec()).collect();
    let mut used = vec![false; n];
    let mut picked = Vec::with_capacity(k);
    for col in 0..k {
        let mut best = None;
        let mut best_val = T::zero();
        for (i, w) in work.iter().enumerate() {
            if !used[i] && w[col].abs() > best_val {
                best_val = w[col].abs();
                best = Some(i);
            }
        }
        let piv = best?;
        if best_val <= tol * scale {
            return None;
        }
        used[piv] = true;
        picked.push(piv);
        let prow = work[piv].clone();
        for (i, w) in work.iter_mut().enumerate() {
            if used[i] {
                continue;
            }
            let f = w[col] / prow[col];
            if f != T::zero() {
                for j in col..k {
                    w[j] -= f * prow[j];
                }
            }
        }
    }
    Some(picked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 4.0]]);
        let inv = m.inverse(1e-12).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
            let col = inv.mul_vec(&e);
            let back = m.mul_vec(&col);
            for j in 0..3 {
                assert!((back[j] - e[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        assert!(m.inverse(1e-12).is_none());
    }

    #[test]
    fn independent_rows_skips_duplicates() {
        let data = [[1.0, 1.0], [1.0, 1.0], [1.0, 2.0]];
        let rows: Vec<&[f64]> = data.iter().map(|r| r.as_slice()).collect();
        let mut picked = independent_rows(&rows, 1e-12).unwrap();
        picked.sort();
        assert!(picked.contains(&2));
        assert_eq!(picked.len(), 2);

        let same = [[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let rows: Vec<&[f64]> = same.iter().map(|r| r.as_slice()).collect();
        assert!(independent_rows(&rows, 1e-12).is_none());
    }
}
