//! Dense row-major tensors with shared, allocation-tracked storage.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::memory::{self, Charge};
use crate::scalar::Scalar;

struct Storage<S> {
    data: Vec<S>,
    charge: Option<Charge>,
}

impl<S: Scalar> Storage<S> {
    fn new(data: Vec<S>) -> Self {
        let charge = memory::charge(data.len() * S::BYTES);
        Self { data, charge }
    }
}

impl<S: Scalar> Clone for Storage<S> {
    fn clone(&self) -> Self {
        Storage::new(self.data.clone())
    }
}

impl<S> Drop for Storage<S> {
    fn drop(&mut self) {
        if let Some(c) = self.charge.take() {
            memory::release(c);
        }
    }
}

/// Immutable-by-default dense array. Cloning shares the buffer.
#[derive(Clone)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    storage: Arc<Storage<S>>,
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor, validating extents, length and finiteness.
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n = validate_shape(shape)?;
        if n != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                expected: vec![n],
                actual: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Tensor::new" });
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    /// Internal constructor: caller guarantees `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, storage: Arc::new(Storage::new(data)) }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, S::one())
    }

    pub fn full(shape: &[usize], value: S) -> Result<Self> {
        let n = validate_shape(shape)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "Tensor::full" });
        }
        Ok(Self::from_parts(shape.to_vec(), vec![value; n]))
    }

    pub fn scalar(value: S) -> Result<Self> {
        Self::new(&[1], vec![value])
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| S::of(v)).collect())
    }

    pub(crate) fn zeros_like_shape(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![S::zero(); shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.storage.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.storage.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.storage.data.clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.as_f64()).collect()
    }

    /// Mutable access; copies the buffer first if it is shared.
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut Arc::make_mut(&mut self.storage).data
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(Error::shape("item", &[1], &self.shape));
        }
        Ok(self.data()[0])
    }

    /// Reinterprets the extents; the buffer is shared, not copied.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let n = validate_shape(shape)?;
        if n != self.numel() {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        Ok(Self { shape: shape.to_vec(), storage: Arc::clone(&self.storage) })
    }

    pub fn is_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_parts(self.shape.clone(), self.data().iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: S) -> Self {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> S {
        self.data().iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.numel() as f64)
    }

    /// Accumulates `other` into `self` in place (shapes must agree).
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data_mut().iter_mut().zip(other.data()) {
            *a += b;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_parts(self.shape.clone(), self.data().iter().map(|v| T::of(v.as_f64())).collect())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<S> {
        if self.shape != other.shape {
            return Err(Error::shape("max_abs_diff", &self.shape, &other.shape));
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max))
    }

    pub fn mse(&self, other: &Self) -> Result<S> {
        let d = self.sub(other)?;
        Ok(d.data().iter().map(|&v| v * v).sum::<S>() / S::of(d.numel() as f64))
    }

    /// Copies the sub-tensor at `index` along axis 0.
    pub fn index_axis0(&self, index: usize) -> Result<Self> {
        let n0 = self.shape[0];
        if index >= n0 {
            return Err(Error::OutOfRange {
                what: "index",
                value: index as i64,
                lo: 0,
                hi: n0 as i64 - 1,
            });
        }
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.ndim() == 1 { vec![1] } else { self.shape[1..].to_vec() };
        Ok(Self::from_parts(shape, self.data()[index * inner..(index + 1) * inner].to_vec()))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::config("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self::from_parts(shape, data))
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("dtype", &S::NAME)
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

impl<S: Scalar> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data() == other.data()
    }
}
