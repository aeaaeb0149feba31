use std::fmt;

use super::{Scalar, ShapeError};

/// Dense row-major tensor of rank 1 or 2. A rank-1 tensor of length `n`
/// behaves as a `1 x n` matrix wherever a matrix is expected.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, ShapeError> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().product::<usize>() != data.len() {
            return Err(ShapeError::new("tensor", shape, vec![data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 2, "rank must be 1 or 2");
        Tensor { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Tensor { shape: vec![rows, cols], data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(vec![v])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().product::<usize>() != self.data.len() {
            return Err(ShapeError::new("reshape", self.shape, shape.to_vec()));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.data.len(), other.data.len());
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect() }
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|x| x.to_f32().unwrap()).collect()
    }

    /// `op(a) * op(b)` where `op` optionally transposes, as a fresh matrix.
    pub fn matmul_ex(a: &Self, ta: bool, b: &Self, tb: bool) -> Result<Self, ShapeError> {
        let (ar, ac) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
        let (br, bc) = if tb { (b.cols(), b.rows()) } else { (b.rows(), b.cols()) };
        if ac != br {
            return Err(ShapeError::new("matmul", vec![ar, ac], vec![br, bc]));
        }
        let mut out = Tensor::zeros(&[ar, bc]);
        gemm_into(a, ta, b, tb, T::zero(), &mut out);
        Ok(out)
    }

    pub fn matmul(&self, b: &Self) -> Result<Self, ShapeError> {
        Tensor::matmul_ex(self, false, b, false)
    }
}

/// `c = op(a) * op(b) + beta * c`. Shapes must already agree.
pub(crate) fn gemm_into<T: Scalar>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool, beta: T, c: &mut Tensor<T>) {
    let (m, k) = if ta { (a.cols(), a.rows()) } else { (a.rows(), a.cols()) };
    let n = if tb { b.rows() } else { b.cols() };
    debug_assert_eq!(c.rows(), m);
    debug_assert_eq!(c.cols(), n);
    if m == 0 || n == 0 {
        return;
    }
    let (a_rs, a_cs) = if ta { (1, a.cols() as isize) } else { (a.cols() as isize, 1) };
    let (b_rs, b_cs) = if tb { (1, b.cols() as isize) } else { (b.cols() as isize, 1) };
    T::gemm(m, k, n, a.data(), a_rs, a_cs, b.data(), b_rs, b_cs, beta, c.data_mut(), n as isize, 1);
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}
