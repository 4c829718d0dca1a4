use std::fmt;

use super::gemm::{gemm, MatMut, MatRef};
use crate::error::{Error, Result};

/// Row-major dense array of `f64`.
#[derive(Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseArray {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "DenseArray{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "DenseArray{:?} [{} values]", self.shape, self.data.len())
        }
    }
}

impl DenseArray {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f64) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Value at a multi-index.
    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {index:?} out of bounds for {:?}", self.shape);
                acc * d + i
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn debug_assert_finite(&self, what: &str) {
        debug_assert!(self.is_finite(), "non-finite values produced by {what}");
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_shape(other, "elementwise")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| x * s)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.same_shape(other, "accumulate")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sums out one axis.
    pub fn sum_axis(&self, axis: usize) -> Result<Self> {
        if axis >= self.ndim() {
            return Err(Error::Dimension(format!(
                "axis {axis} out of range for {:?}",
                self.shape
            )));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        Ok(Self { shape, data: out })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.same_shape(other, "comparison")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Self> {
        let [r, c] = self.dims2("transpose")?;
        Ok(Self::from_fn([c, r], |i| self.data[(i % r) * c + i / r]))
    }

    /// Matrix product with optional shared leading batch dimensions.
    ///
    /// `[.., m, k] x [.., k, n] -> [.., m, n]`; a 2-D right operand is broadcast
    /// over the batch of the left one.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let mismatch = || {
            Error::Dimension(format!(
                "matmul of {:?} by {:?}",
                self.shape, other.shape
            ))
        };
        if self.ndim() < 2 || other.ndim() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (self.shape[self.ndim() - 2], self.shape[self.ndim() - 1]);
        let (k2, n) = (other.shape[other.ndim() - 2], other.shape[other.ndim() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let batch_a = &self.shape[..self.ndim() - 2];
        let batch_b = &other.shape[..other.ndim() - 2];
        if !batch_b.is_empty() && batch_a != batch_b {
            return Err(mismatch());
        }
        let batches: usize = batch_a.iter().product();
        let mut out = vec![0.0; batches * m * n];
        for b in 0..batches {
            let a_slice = &self.data[b * m * k..(b + 1) * m * k];
            let b_slice = if batch_b.is_empty() {
                &other.data[..]
            } else {
                &other.data[b * k * n..(b + 1) * k * n]
            };
            gemm(
                1.0,
                MatRef::row_major(a_slice, m, k),
                MatRef::row_major(b_slice, k, n),
                0.0,
                MatMut::row_major(&mut out[b * m * n..(b + 1) * m * n], m, n),
            );
        }
        let mut shape = batch_a.to_vec();
        shape.extend([m, n]);
        let result = Self { shape, data: out };
        result.debug_assert_finite("matmul");
        Ok(result)
    }

    fn dims2(&self, what: &str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [r, c] => Ok([r, c]),
            _ => Err(Error::Dimension(format!(
                "{what} needs a 2-D array, got {:?}",
                self.shape
            ))),
        }
    }

    fn same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{what} of {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: DenseArray,
    pub grad: DenseArray,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseArray) -> Self {
        let grad = DenseArray::zeros(value.shape().to_vec());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adds `g` into the gradient.
    pub fn accumulate(&mut self, g: &[f64]) {
        assert_eq!(g.len(), self.grad.len(), "gradient length for {}", self.name);
        for (a, b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_times_matrix() {
        let m = DenseArray::new([3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let out = DenseArray::identity(3).matmul(&m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn hand_product() {
        let a = DenseArray::new([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseArray::new([2, 1], vec![0.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let a = DenseArray::zeros([2, 3]);
        let b = DenseArray::zeros([2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.matches("[2, 3]").count() == 2, "{msg}");
    }

    #[test]
    fn batched_with_broadcast_rhs() {
        let a = DenseArray::from_fn([2, 2, 3], |i| i as f64);
        let b = DenseArray::from_fn([3, 2], |i| 1.0 - i as f64);
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[2, 2, 2]);
        for batch in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let want: f64 = (0..3).map(|p| a.at(&[batch, i, p]) * b.at(&[p, j])).sum();
                    assert!((out.at(&[batch, i, j]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn shape_product_must_match() {
        assert!(DenseArray::new([2, 2], vec![1.0; 3]).is_err());
        assert!(DenseArray::zeros([4]).reshape([3]).is_err());
    }

    #[test]
    fn sum_axis_middle() {
        let a = DenseArray::from_fn([2, 3, 2], |i| i as f64);
        let s = a.sum_axis(1).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[6.0, 9.0, 24.0, 27.0]);
    }
}
