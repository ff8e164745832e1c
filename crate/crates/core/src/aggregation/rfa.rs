use super::basic::mean;
use super::validate;
use crate::error::{Error, Result};
use crate::nn::{distance, ParamVector};
use crate::scalar::Scalar;

/// Approximate geometric median and the objective value after each
/// iteration (index 0 is the starting point).
#[derive(Debug, Clone)]
pub struct GeometricMedian<T> {
    pub point: ParamVector<T>,
    pub iterations: usize,
    pub objective: Vec<T>,
}

/// `sum_i |u_i - v|`
pub fn weiszfeld_objective<T: Scalar>(updates: &[ParamVector<T>], v: &[T]) -> T {
    updates.iter().map(|u| distance(u, v)).sum()
}

/// Smoothed Weiszfeld iteration started from the mean:
/// `v <- sum(u_i / max(nu, |u_i - v|)) / sum(1 / max(nu, |u_i - v|))`,
/// stopping when an iteration moves `v` by less than `tol` or after
/// `max_iters` iterations.
pub fn rfa_geometric_median<T: Scalar>(updates: &[ParamVector<T>], max_iters: usize, tol: T, nu: T) -> Result<GeometricMedian<T>> {
    validate(updates)?;
    if max_iters == 0 || !(tol > T::zero()) || !(nu > T::zero()) {
        return Err(Error::invalid("RFA needs max_iters >= 1, tol > 0 and nu > 0"));
    }
    let mut v = mean(updates);
    let mut objective = vec![weiszfeld_objective(updates, &v)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let weights: Vec<T> = updates.iter().map(|u| T::one() / distance(u, &v).max(nu)).collect();
        let total: T = weights.iter().copied().sum();
        let mut next = ParamVector::zeros(v.dim());
        for (u, &w) in updates.iter().zip(&weights) {
            next.axpy(w / total, u);
        }
        let step = next.distance(&v);
        v = next;
        objective.push(weiszfeld_objective(updates, &v));
        if step < tol {
            break;
        }
    }
    Ok(GeometricMedian { point: v, iterations, objective })
}
