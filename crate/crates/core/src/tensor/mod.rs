//! Dense row-major `f64` tensors and a reverse-mode tape.
//!
//! A [`Tensor`] is an immutable value plus an optional gradient slot. Math that
//! needs derivatives runs on a [`Tape`]: leaves are registered with
//! [`Tape::leaf`] or [`Tape::watch`], every primitive appends a node, and
//! [`Tape::backward`] consumes the tape and returns [`Gradients`].

mod kernels;
mod tape;

pub use tape::{Gradients, Mode, Reduce, Tape, Var};

pub(crate) use kernels::{matmul_nn, matmul_nt, matmul_tn};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, rejecting zero-sized dimensions, a length mismatch and
    /// non-finite entries.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("tensor entry {i} ({})", data[i]),
            });
        }
        Ok(Self::from_raw(shape.to_vec(), data))
    }

    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_raw(vec![1], vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim(
                "from_rows",
                format!("{cols} columns"),
                format!("{}", bad.len()),
            ));
        }
        Self::new(&[rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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
            return Err(Error::dim(
                "set_grad",
                format!("{}", self.data.len()),
                format!("{}", grad.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Replaces the values, keeping the shape. Used by optimizers.
    pub fn assign(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.data.len() {
            return Err(Error::dim(
                "assign",
                format!("{}", self.data.len()),
                format!("{}", data.len()),
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("assigned entry {i}"),
            });
        }
        self.data.copy_from_slice(data);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Element of a 2-D tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Copy of column `c` of a 2-D tensor.
    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.at(r, c)).collect()
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape, self.data.len())?;
        Ok(Self::from_raw(shape.to_vec(), self.data.clone()))
    }

    /// Plain 2-D transpose (no tape).
    pub fn transpose(&self) -> Result<Self> {
        if self.shape.len() != 2 {
            return Err(Error::dim(
                "transpose",
                "2-D tensor",
                format!("{:?}", self.shape),
            ));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self::from_raw(vec![n, m], out))
    }

    /// Plain matrix product (no tape).
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k, n) = matmul_dims(self.shape(), other.shape())?;
        let mut out = vec![0.0; m * n];
        matmul_nn(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self::from_raw(vec![m, n], out))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::dim(
            "tensor",
            "positive dimensions",
            format!("{shape:?}"),
        ));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::dim(
            "tensor",
            format!("{n} elements for {shape:?}"),
            format!("{len}"),
        ));
    }
    Ok(())
}

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::dim(
            "matmul",
            format!("[m, k] x [k, n], left {a:?}"),
            format!("{b:?}"),
        ));
    }
    Ok((a[0], a[1], b[1]))
}

/// Splits `shape` around `axis` into (outer, axis length, inner) strides.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}
