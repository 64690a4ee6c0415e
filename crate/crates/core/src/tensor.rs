//! Dense row-major `f64` matrices and strided GEMM views.
//!
//! All heavy products go through [`gemm`], a thin safe wrapper around
//! `matrixmultiply::dgemm` that accepts arbitrary row/column strides. Strided
//! views let the attention and recurrent layers address per-head column
//! blocks and per-timestep row sets of a batched activation matrix without
//! copying.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `rows × cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2 {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Single-column matrix.
    pub fn column(values: &[f64]) -> Self {
        Tensor2 {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
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

    /// Copy of column `c`.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        check_inner("matmul", self.cols, rhs.rows)?;
        let mut out = Tensor2::zeros(self.rows, rhs.cols);
        gemm(1.0, self.view(), rhs.view(), 0.0, out.view_mut());
        Ok(out)
    }

    /// `selfᵀ · rhs`
    pub fn t_matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        check_inner("t_matmul", self.rows, rhs.rows)?;
        let mut out = Tensor2::zeros(self.cols, rhs.cols);
        gemm(1.0, self.view().t(), rhs.view(), 0.0, out.view_mut());
        Ok(out)
    }

    /// `self · rhsᵀ`
    pub fn matmul_t(&self, rhs: &Tensor2) -> Result<Tensor2> {
        check_inner("matmul_t", self.cols, rhs.cols)?;
        let mut out = Tensor2::zeros(self.rows, rhs.rows);
        gemm(1.0, self.view(), rhs.view().t(), 0.0, out.view_mut());
        Ok(out)
    }

    pub fn add_assign(&mut self, rhs: &Tensor2) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} to {:?}",
                rhs.shape(),
                self.shape()
            )));
        }
        self.data
            .iter_mut()
            .zip(&rhs.data)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn hcat(parts: &[&Tensor2]) -> Result<Tensor2> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::shape("hcat operands differ in row count"));
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut out = Tensor2::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let dst = out.row_mut(r);
            for p in parts {
                dst[off..off + p.cols].copy_from_slice(p.row(r));
                off += p.cols;
            }
        }
        Ok(out)
    }

    /// Copy of rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Tensor2 {
        Tensor2 {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor2) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn view(&self) -> View<'_> {
        View {
            data: &self.data,
            off: 0,
            rows: self.rows,
            cols: self.cols,
            rs: self.cols as isize,
            cs: 1,
        }
    }

    pub(crate) fn view_mut(&mut self) -> ViewMut<'_> {
        let (rows, cols) = (self.rows, self.cols);
        ViewMut {
            data: &mut self.data,
            off: 0,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }
}

impl std::ops::Index<(usize, usize)> for Tensor2 {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Tensor2 {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

fn check_inner(op: &str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::shape(format!(
            "{op}: inner dimensions {left} and {right} differ"
        )));
    }
    Ok(())
}

/// Read-only strided matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    off: usize,
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

/// Mutable strided matrix view into a slice.
pub(crate) struct ViewMut<'a> {
    data: &'a mut [f64],
    off: usize,
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl<'a> View<'a> {
    /// Row-major `rows × cols` block starting at element `off` with row stride `rs`.
    pub(crate) fn strided(data: &'a [f64], off: usize, rows: usize, cols: usize, rs: usize) -> Self {
        let v = View {
            data,
            off,
            rows,
            cols,
            rs: rs as isize,
            cs: 1,
        };
        v.check();
        v
    }

    pub(crate) fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub(crate) fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.off as isize
                + (self.rows as isize - 1) * self.rs
                + (self.cols as isize - 1) * self.cs;
            assert!(
                last >= 0 && (last as usize) < self.data.len(),
                "view out of bounds"
            );
        }
    }
}

impl<'a> ViewMut<'a> {
    pub(crate) fn strided(
        data: &'a mut [f64],
        off: usize,
        rows: usize,
        cols: usize,
        rs: usize,
    ) -> Self {
        let v = ViewMut {
            data,
            off,
            rows,
            cols,
            rs: rs as isize,
            cs: 1,
        };
        if rows > 0 && cols > 0 {
            let last = off + (rows - 1) * rs + cols - 1;
            assert!(last < v.data.len(), "mutable view out of bounds");
        }
        v
    }
}

/// `c ← alpha · a · b + beta · c` on strided views.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        // matrixmultiply leaves C untouched for k = 0 only when beta = 1
        for i in 0..m {
            for j in 0..n {
                let idx = (c.off as isize + i as isize * c.rs + j as isize * c.cs) as usize;
                c.data[idx] *= beta;
            }
        }
        return;
    }
    // SAFETY: all three views were bounds-checked above, `c` is borrowed
    // mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.off),
            a.rs,
            a.cs,
            b.data.as_ptr().add(b.off),
            b.rs,
            b.cs,
            beta,
            c.data.as_mut_ptr().add(c.off),
            c.rs,
            c.cs,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor2, b: &Tensor2) -> Tensor2 {
        let mut out = Tensor2::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    fn sample(rows: usize, cols: usize, salt: f64) -> Tensor2 {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + salt) * 0.37).sin())
            .collect();
        Tensor2::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn products_match_naive() {
        let a = sample(5, 3, 0.1);
        let b = sample(3, 4, 0.7);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-14);
        let at = a.transpose();
        assert!(at.t_matmul(&b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-14);
        let bt = b.transpose();
        assert!(a.matmul_t(&bt).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-14);
    }

    #[test]
    fn inner_mismatch_is_shape_error() {
        let a = sample(2, 3, 0.0);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn strided_block_product() {
        // multiply the column block [1..3) of a 4x5 matrix by a 2x2
        let a = sample(4, 5, 0.3);
        let b = sample(2, 2, 1.1);
        let mut out = Tensor2::zeros(4, 2);
        gemm(
            1.0,
            View::strided(a.data(), 1, 4, 2, 5),
            b.view(),
            0.0,
            out.view_mut(),
        );
        let block = Tensor2::from_rows(
            &(0..4)
                .map(|r| vec![a[(r, 1)], a[(r, 2)]])
                .collect::<Vec<_>>(),
        )
        .unwrap();
        assert!(out.max_abs_diff(&naive(&block, &b)) < 1e-14);
    }

    #[test]
    fn hcat_and_rows() {
        let a = sample(3, 2, 0.0);
        let b = sample(3, 1, 5.0);
        let c = Tensor2::hcat(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), (3, 3));
        assert_eq!(c[(2, 2)], b[(2, 0)]);
        assert_eq!(c.slice_rows(1, 2).row(0), c.row(1));
    }
}
