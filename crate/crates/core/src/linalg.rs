//! Dense row-major matrices and the handful of kernels the network needs.
//!
//! Every reduction over the point dimension (rows of an `N x C` feature
//! matrix) goes through [`pairwise_rows`], a fixed-shape tree reduction. The
//! traversal order depends only on the row count, so results are
//! reproducible for a given input regardless of how callers schedule work.

use crate::real::Real;

/// Rows per leaf of the pairwise reduction tree.
const PAIRWISE_LEAF: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

/// Per-point deep features `N x C`.
pub type FeatureMatrix<T> = Matrix<T>;

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix { rows, cols, data: vec![value; rows * cols] }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match {rows}x{cols}");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
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

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn add(&self, other: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn scale(&mut self, s: T) {
        for v in &mut self.data {
            *v = *v * s;
        }
    }

    /// Row `r` of the result is `bias` added to row `r` of `self`.
    pub fn add_row_broadcast(&mut self, bias: &[T]) {
        assert_eq!(bias.len(), self.cols, "bias width mismatch");
        for r in 0..self.rows {
            for (v, &b) in self.row_mut(r).iter_mut().zip(bias) {
                *v = *v + b;
            }
        }
    }

    /// Copy of columns `start..start + width`.
    pub fn col_block(&self, start: usize, width: usize) -> Matrix<T> {
        assert!(start + width <= self.cols);
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Writes `block` into columns `start..start + block.cols()`.
    pub fn set_col_block(&mut self, start: usize, block: &Matrix<T>) {
        assert_eq!(block.rows, self.rows);
        assert!(start + block.cols <= self.cols);
        for r in 0..self.rows {
            let w = block.cols;
            self.row_mut(r)[start..start + w].copy_from_slice(block.row(r));
        }
    }

    /// Accumulates `block` into columns `start..start + block.cols()`.
    pub fn add_col_block(&mut self, start: usize, block: &Matrix<T>) {
        assert_eq!(block.rows, self.rows);
        for r in 0..self.rows {
            let w = block.cols;
            for (a, &b) in self.row_mut(r)[start..start + w].iter_mut().zip(block.row(r)) {
                *a = *a + b;
            }
        }
    }

    /// Rows `start..start + count`.
    pub fn row_block(&self, start: usize, count: usize) -> Matrix<T> {
        assert!(start + count <= self.rows);
        Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        }
    }

    /// Vertical concatenation.
    pub fn vstack(top: &Matrix<T>, bottom: &Matrix<T>) -> Matrix<T> {
        assert_eq!(top.cols, bottom.cols, "vstack width mismatch");
        let mut data = Vec::with_capacity(top.data.len() + bottom.data.len());
        data.extend_from_slice(&top.data);
        data.extend_from_slice(&bottom.data);
        Matrix { rows: top.rows + bottom.rows, cols: top.cols, data }
    }

    /// Rows selected by `order`: `out[i] = self[order[i]]`.
    pub fn gather_rows(&self, order: &[usize]) -> Matrix<T> {
        let mut out = Matrix::zeros(order.len(), self.cols);
        for (i, &src) in order.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn frobenius_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Matrix<T>) -> T {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a - b).abs()).fold(T::zero(), T::max)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::of(v.f64())).collect() }
    }
}

/// `a (n x k) * b (k x m)`.
pub fn matmul<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimension mismatch");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * m..(i + 1) * m];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
    out
}

/// `a (n x k) * b^T` where `b` is `m x k`.
pub fn matmul_nt<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimension mismatch");
    matmul(a, &b.transpose())
}

/// `a^T (k x n) * b (n x m)` with the sum over the `n` shared rows taken by
/// pairwise reduction.
pub fn matmul_tn<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    assert_eq!(a.rows, b.rows, "matmul_tn row count mismatch");
    let (k, m) = (a.cols, b.cols);
    pairwise_rows(a.rows, k * m, &|lo, hi, acc: &mut [T]| {
        for r in lo..hi {
            let arow = a.row(r);
            let brow = b.row(r);
            for (p, &ap) in arow.iter().enumerate() {
                if ap == T::zero() {
                    continue;
                }
                for (o, &bv) in acc[p * m..(p + 1) * m].iter_mut().zip(brow) {
                    *o = *o + ap * bv;
                }
            }
        }
    })
    .into_matrix(k, m)
}

/// Column sums of `a` (pairwise over rows).
pub fn col_sums<T: Real>(a: &Matrix<T>) -> Vec<T> {
    let m = a.cols;
    pairwise_rows(a.rows, m, &|lo, hi, acc: &mut [T]| {
        for r in lo..hi {
            for (o, &v) in acc.iter_mut().zip(a.row(r)) {
                *o = *o + v;
            }
        }
    })
    .0
}

/// Column means of `a`; an empty matrix yields zeros.
pub fn col_means<T: Real>(a: &Matrix<T>) -> Vec<T> {
    let mut s = col_sums(a);
    if a.rows > 0 {
        let inv = T::one() / T::of(a.rows as f64);
        for v in &mut s {
            *v = *v * inv;
        }
    }
    s
}

/// Pairwise sum of a slice.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    if xs.len() <= PAIRWISE_LEAF {
        return xs.iter().fold(T::zero(), |a, &b| a + b);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub struct Accum<T>(Vec<T>);

impl<T: Real> Accum<T> {
    fn into_matrix(self, rows: usize, cols: usize) -> Matrix<T> {
        Matrix::from_vec(rows, cols, self.0)
    }
}

/// Tree reduction over `0..n` rows. `leaf(lo, hi, acc)` accumulates rows
/// `lo..hi` sequentially into a zeroed buffer of length `width`; partial
/// buffers are combined bottom-up by halving the row range.
pub fn pairwise_rows<T: Real>(n: usize, width: usize, leaf: &dyn Fn(usize, usize, &mut [T])) -> Accum<T> {
    fn go<T: Real>(lo: usize, hi: usize, width: usize, leaf: &dyn Fn(usize, usize, &mut [T])) -> Vec<T> {
        let mut acc = vec![T::zero(); width];
        if hi - lo <= PAIRWISE_LEAF {
            leaf(lo, hi, &mut acc);
            return acc;
        }
        let mid = lo + (hi - lo) / 2;
        let left = go(lo, mid, width, leaf);
        let right = go(mid, hi, width, leaf);
        for ((o, l), r) in acc.iter_mut().zip(left).zip(right) {
            *o = l + r;
        }
        acc
    }
    Accum(go(0, n, width, leaf))
}

/// Numerically stable softmax of each row in place (max subtraction).
pub fn softmax_rows<T: Real>(m: &mut Matrix<T>) {
    for r in 0..m.rows {
        softmax_in_place(m.row_mut(r));
    }
}

pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Backward through a row softmax: given `p = softmax(a)` and `dL/dp`,
/// returns `dL/da = p * (dp - <dp, p>)` row by row.
pub fn softmax_rows_backward<T: Real>(p: &Matrix<T>, dp: &Matrix<T>) -> Matrix<T> {
    assert_eq!(p.shape(), dp.shape());
    let mut out = Matrix::zeros(p.rows, p.cols);
    for r in 0..p.rows {
        let pr = p.row(r);
        let dr = dp.row(r);
        let dot: T = pr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((o, &pv), &dv) in out.row_mut(r).iter_mut().zip(pr).zip(dr) {
            *o = pv * (dv - dot);
        }
    }
    out
}
