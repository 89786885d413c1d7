//! Dense row-major matrices and the kernels the model is built from.
//!
//! Every output element of the products below is accumulated in a fixed
//! order that depends only on the inner dimension, so a row's result is the
//! same whether it is computed alone or stacked with other rows.

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

const ROW_BLOCK: usize = 8;

#[inline]
fn axpy<T: Scalar>(out: &mut [T], a: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// Dot product with four interleaved accumulators.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = T::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let data = (0..rows * cols).map(|k| f(k / cols, k % cols)).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix<T>) {
        assert_eq!(self.shape(), other.shape(), "add shape");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn add(&self, other: &Matrix<T>) -> Self {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    /// Adds a 1×cols row vector to every row.
    pub fn add_row_assign(&mut self, bias: &Matrix<T>) {
        assert_eq!((1, self.cols), bias.shape(), "bias shape");
        for i in 0..self.rows {
            for (a, &b) in self.row_mut(i).iter_mut().zip(&bias.data) {
                *a += b;
            }
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn push_rows(&mut self, other: &Matrix<T>) {
        assert!(self.rows == 0 || self.cols == other.cols, "push_rows width");
        if self.rows == 0 {
            self.cols = other.cols;
        }
        self.data.extend_from_slice(&other.data);
        self.rows += other.rows;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_vec(idx.len(), self.cols, data)
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Matrix::from_vec(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn transpose(&self) -> Self {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// self (m×k) · other (k×n).
    pub fn matmul(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for i0 in (0..m).step_by(ROW_BLOCK) {
            let i1 = (i0 + ROW_BLOCK).min(m);
            for p in 0..k {
                let brow = other.row(p);
                for i in i0..i1 {
                    let a = self.data[i * k + p];
                    axpy(&mut out.data[i * n..(i + 1) * n], a, brow);
                }
            }
        }
        out
    }

    /// self (m×k) · otherᵀ where other is n×k.
    pub fn matmul_bt(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_bt inner dimension");
        let (m, n) = (self.rows, other.rows);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let a = self.row(i);
            for j in 0..n {
                out.data[i * n + j] = dot(a, other.row(j));
            }
        }
        out
    }

    /// selfᵀ · other where self is k×m and other is k×n.
    pub fn matmul_at(&self, other: &Matrix<T>) -> Self {
        assert_eq!(self.rows, other.rows, "matmul_at inner dimension");
        let (k, m, n) = (self.rows, self.cols, other.cols);
        let mut out = Matrix::zeros(m, n);
        for p in 0..k {
            let brow = other.row(p);
            for i in 0..m {
                let a = self.data[p * m + i];
                if a != T::zero() {
                    axpy(&mut out.data[i * n..(i + 1) * n], a, brow);
                }
            }
        }
        out
    }
}

/// tanh approximation of GELU.
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let k = T::of(0.044715);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of((2.0 / std::f64::consts::PI).sqrt());
    let half = T::of(0.5);
    let k = T::of(0.044715);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise layer normalization; returns the output plus each row's mean and
/// reciprocal standard deviation.
pub(crate) fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
    let d = x.cols();
    let dn = T::of(d as f64);
    let eps = T::of(LN_EPS);
    let mut out = Matrix::zeros(x.rows(), d);
    let mut means = Vec::with_capacity(x.rows());
    let mut rstds = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let rstd = T::one() / (var + eps).sqrt();
        let o = out.row_mut(i);
        for j in 0..d {
            o[j] = (row[j] - mean) * rstd * gamma.data[j] + beta.data[j];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Numerically stable in-place softmax over the entries of `row` whose mask
/// is true; masked entries become zero.
pub(crate) fn masked_softmax<T: Scalar>(row: &mut [T], allowed: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if allowed(j) && v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = T::zero();
        }
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Sinusoidal position encodings for `len` positions starting at `start`.
pub(crate) fn positional<T: Scalar>(start: usize, len: usize, d: usize) -> Matrix<T> {
    Matrix::from_fn(len, d, |i, j| {
        let pos = (start + i) as f64;
        let rate = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        T::of(if j % 2 == 0 { (pos * rate).sin() } else { (pos * rate).cos() })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| (0..a.cols()).map(|p| a.get(i, p) * b.get(p, j)).sum())
    }

    fn m(rows: usize, cols: usize, seed: f64) -> Matrix<f64> {
        Matrix::from_fn(rows, cols, |i, j| ((i * 31 + j * 17) as f64 * 0.37 + seed).sin())
    }

    #[test]
    fn products_agree_with_naive() {
        let a = m(11, 7, 0.1);
        let b = m(7, 5, 0.2);
        let c = naive(&a, &b);
        let close = |x: &Matrix<f64>, y: &Matrix<f64>| x.data().iter().zip(y.data()).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&a.matmul(&b), &c));
        assert!(close(&a.matmul_bt(&b.transpose()), &c));
        assert!(close(&a.transpose().matmul_at(&b), &c));
    }

    #[test]
    fn row_results_independent_of_batch() {
        let a = m(13, 9, 0.3);
        let b = m(9, 6, 0.4);
        let full = a.matmul(&b);
        for i in 0..13 {
            let single = a.slice_rows(i, i + 1).matmul(&b);
            assert_eq!(single.row(0), full.row(i));
            let single = a.slice_rows(i, i + 1).matmul_bt(&b.transpose());
            assert_eq!(single.row(0), a.matmul_bt(&b.transpose()).row(i));
        }
    }

    #[test]
    fn softmax_and_layer_norm() {
        let mut row = vec![1.0, 2.0, 3.0, 100.0];
        masked_softmax(&mut row, |j| j < 3);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(row[3], 0.0);
        let x = Matrix::from_fn(3, 8, |i, j| (i + 1) as f64 * ((j * j) as f64 * 0.3 - 1.0));
        let g = Matrix::from_fn(1, 8, |_, _| 1.0);
        let b = Matrix::zeros(1, 8);
        let (y, _, _) = layer_norm(&x, &g, &b);
        for i in 0..3 {
            let mean: f64 = y.row(i).iter().sum::<f64>() / 8.0;
            let var: f64 = y.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
