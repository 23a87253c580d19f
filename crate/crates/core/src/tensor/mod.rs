//! Dense tensors, a reverse-mode tape, finite-difference gradient checks and
//! the `VGPT` binary tensor format.
//!
//! [`Tensor`] is a plain row-major `f64` array. Eager free functions
//! ([`matmul`], [`rowwise_max`]) operate on values directly; the [`Tape`]
//! records the same operations so gradients can be propagated back to any
//! leaf marked `requires_grad`.

pub mod gradcheck;
pub mod io;
pub mod kernels;
mod tape;

pub use gradcheck::{gradcheck, GradcheckReport, TensorCheck};
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Row-major dense array of `f64` with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros([n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new([rows.len(), cols], data)
    }

    /// 1×d row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Gaussian entries with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        let mut t = Self::zeros(shape);
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite std");
            t.data.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        t
    }

    /// Same as [`Tensor::randn`] but every entry is rounded to the nearest
    /// `f32`, so the tensor survives a `VGPT` round trip unchanged.
    pub fn randn_f32<R: Rng + ?Sized>(
        shape: impl Into<Vec<usize>>,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut t = Self::randn(shape, std, rng);
        t.data.iter_mut().for_each(|v| *v = f64::from(*v as f32));
        t
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::shape("set_grad", &self.shape, &[grad.len()]));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a matrix (first dimension).
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Columns of a matrix (product of the trailing dimensions).
    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (m, n) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new([n, m], out)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), c],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Stacks the rows of two matrices with equal width.
    pub fn vstack(&self, other: &Tensor) -> Result<Self> {
        if self.cols() != other.cols() {
            return Err(Error::shape("vstack", &self.shape, &other.shape));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new([self.rows() + other.rows(), self.cols()], data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            [n] => Ok((1, *n)),
            _ => Err(Error::shape(op, &self.shape, &[2])),
        }
    }
}

/// Matrix product of `a[m×k]` and `b[k×n]`. One-dimensional inputs are
/// treated as `1×k` rows.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.matrix_dims("matmul")?;
    let (k2, n) = b.matrix_dims("matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    Tensor::new([m, n], kernels::matmul(a.data(), b.data(), m, k, n))
}

/// Per-column maximum over the rows of `stack[k×d]`, returned as a `[d]`
/// vector. Empty input is rejected; callers that need a zero vector for an
/// empty neighbourhood must substitute it themselves.
pub fn rowwise_max(stack: &Tensor) -> Result<Tensor> {
    let (k, d) = stack.matrix_dims("rowwise_max")?;
    if k == 0 {
        return Err(Error::Empty { op: "rowwise_max" });
    }
    let (values, _) =
        kernels::rowwise_max((0..k).map(|i| stack.row(i)), d).expect("k >= 1");
    Tensor::new([d], values)
}

/// Element-wise GELU (tanh approximation, see [`kernels::gelu`]).
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.grad = None;
    out.requires_grad = false;
    out.data.iter_mut().for_each(|v| *v = kernels::gelu(*v));
    out
}
