//! Small dense row-major matrices for the measurement model and solvers.

use std::ops::{Index, IndexMut};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};
use crate::tensorgrad::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim("matrix", format!("{rows}×{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Matrix { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
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

    pub fn randn<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| T::lit(rng.gen_range(lo..hi)))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
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

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `op(self)·op(rhs)`.
    pub fn matmul_t(&self, ta: bool, rhs: &Self, tb: bool) -> Result<Self> {
        let (m, k) = if ta { (self.cols, self.rows) } else { (self.rows, self.cols) };
        let (k2, n) = if tb { (rhs.cols, rhs.rows) } else { (rhs.rows, rhs.cols) };
        if k != k2 {
            return Err(Error::dim("matmul", format!("{:?} · {:?}", self.dims(), rhs.dims())));
        }
        let mut out = Self::zeros(m, n);
        gemm(&self.data, ta, &rhs.data, tb, m, k, n, &mut out.data, false);
        Ok(out)
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        self.matmul_t(false, rhs, false)
    }

    fn check_same(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same("elementwise", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn dot(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn frob_norm(&self) -> T {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data.iter().zip(&other.data).fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::lit(self.data.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn clamp(&self, lo: T, hi: T) -> Self {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Column-major vectorization, `vec(X)`.
    pub fn vec_col_major(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            for r in 0..self.rows {
                v.push(self[(r, c)]);
            }
        }
        v
    }

    /// Explicit Kronecker product `self ⊗ rhs`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (p, q) = rhs.dims();
        Self::from_fn(self.rows * p, self.cols * q, |r, c| self[(r / p, c / q)] * rhs[(r % p, c % q)])
    }

    /// Matrix-vector product.
    pub fn apply(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.cols {
            return Err(Error::dim("apply", format!("{:?} · vector of {}", self.dims(), v.len())));
        }
        Ok((0..self.rows).map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum()).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect() }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("matrix extents")
    }

    /// Accepts `H×W` or `1×H×W` tensors.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        match t.shape() {
            [r, c] | [1, r, c] => Matrix::new(*r, *c, t.data().to_vec()),
            s => Err(Error::dim("from_tensor", format!("expected H×W or 1×H×W, got {s:?}"))),
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_small() {
        let a = Matrix::<f64>::new(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Matrix::<f64>::identity(2);
        let k = a.kron(&b);
        assert_eq!(k.dims(), (2, 4));
        assert_eq!(k.data(), &[1.0, 0.0, 2.0, 0.0, 0.0, 1.0, 0.0, 2.0]);
    }

    #[test]
    fn identity_product() {
        let a = Matrix::<f64>::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(Matrix::identity(3).matmul(&a).unwrap(), a);
        assert!(a.matmul(&a).is_err());
        assert_eq!(a.matmul_t(false, &a, true).unwrap().dims(), (3, 3));
    }
}
