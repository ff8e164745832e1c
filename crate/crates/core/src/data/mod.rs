//! Datasets, non-i.i.d. partitioning and poisoned-subset selection.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx};
pub use partition::{dirichlet_partition, poison_split, PartitionPlan, PoisonSplit};
pub use synthetic::gen_synthetic;

use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::scalar::Scalar;

/// Labelled samples with features in `[0, 1]`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    shape: Shape,
    classes: usize,
    features: Vec<T>,
    labels: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(shape: Shape, classes: usize, features: Vec<T>, labels: Vec<usize>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a dataset needs at least two classes"));
        }
        if features.len() != labels.len() * shape.len() {
            return Err(Error::ShapeMismatch { expected: labels.len() * shape.len(), got: features.len() });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        if features.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
            return Err(Error::invalid("feature values must lie in [0, 1]"));
        }
        Ok(Dataset { shape, classes, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let d = self.shape.len();
        &self.features[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Copies the given samples, in order, into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset<T> {
        let mut features = Vec::with_capacity(indices.len() * self.shape.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
        }
        Dataset { shape: self.shape, classes: self.classes, features, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Dataset<T>, Dataset<T>) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Same samples with a larger class count (for train/test sets that do
    /// not both contain the highest label).
    pub fn with_classes(mut self, classes: usize) -> Result<Self> {
        if classes < self.classes {
            return Err(Error::invalid(format!("cannot shrink {} classes to {classes}", self.classes)));
        }
        self.classes = classes;
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[T], usize)> + '_ {
        self.features.chunks_exact(self.shape.len()).zip(self.labels.iter().copied())
    }
}
