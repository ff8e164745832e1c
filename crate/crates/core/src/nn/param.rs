use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat vector of model parameters or of a model update.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector<T>(Vec<T>);

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![T::zero(); dim])
    }

    pub fn from_vec(values: Vec<T>) -> Self {
        ParamVector(values)
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> T {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Self) -> T {
        dot(&self.0, &other.0)
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: T, other: &[T]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, &b) in self.0.iter_mut().zip(other) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.0 {
            *v *= factor;
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        ParamVector(self.0.iter().map(|&v| v * factor).collect())
    }

    /// `self - other`, elementwise.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim(), 0)?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(&a, &b)| a - b).collect()))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim(), other.dim(), 0)?;
        Ok(ParamVector(self.0.iter().zip(&other.0).map(|(&a, &b)| a + b).collect()))
    }

    pub fn distance(&self, other: &Self) -> T {
        distance(&self.0, &other.0)
    }
}

impl<T> Deref for ParamVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for ParamVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

impl<T> From<Vec<T>> for ParamVector<T> {
    fn from(v: Vec<T>) -> Self {
        ParamVector(v)
    }
}

impl<T> AsRef<[T]> for ParamVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

pub(crate) fn check_dim(expected: usize, got: usize, index: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { index, expected, got });
    }
    Ok(())
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}
