//! Dimension-wise rules: trimmed mean, median and majority sign.

use super::validate;
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::{total_cmp, Scalar};

fn per_coordinate<T: Scalar>(updates: &[ParamVector<T>], mut reduce: impl FnMut(&mut [T]) -> T) -> ParamVector<T> {
    let d = updates[0].dim();
    let mut column = vec![T::zero(); updates.len()];
    let out = (0..d)
        .map(|j| {
            for (c, u) in column.iter_mut().zip(updates) {
                *c = u[j];
            }
            reduce(&mut column)
        })
        .collect();
    ParamVector::from_vec(out)
}

/// Drops the `m` largest and `m` smallest values of every coordinate and
/// averages the rest. The average is a running mean, so a coordinate whose
/// kept values are all equal comes back bit-identical.
pub fn trimmed_mean<T: Scalar>(updates: &[ParamVector<T>], m: usize) -> Result<ParamVector<T>> {
    validate(updates)?;
    let n = updates.len();
    if n <= 2 * m {
        return Err(Error::invalid(format!("trimmed mean with m = {m} needs more than {} updates, got {n}", 2 * m)));
    }
    Ok(per_coordinate(updates, |col| {
        col.sort_by(total_cmp);
        running_mean(&col[m..n - m])
    }))
}

fn running_mean<T: Scalar>(values: &[T]) -> T {
    let mut mean = values[0];
    for (k, &v) in values.iter().enumerate().skip(1) {
        mean += (v - mean) / T::count(k + 1);
    }
    mean
}

/// Median of a scratch slice; even lengths average the two central values.
pub(crate) fn median_of<T: Scalar>(values: &mut [T]) -> T {
    values.sort_by(total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    }
}

pub fn coordinate_median<T: Scalar>(updates: &[ParamVector<T>]) -> Result<ParamVector<T>> {
    validate(updates)?;
    Ok(per_coordinate(updates, |col| median_of(col)))
}

fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// `gamma_s * sign(sum_i sign(u_i))`; exact ties give 0.
pub fn sign_aggregate<T: Scalar>(updates: &[ParamVector<T>], gamma_s: T) -> Result<ParamVector<T>> {
    validate(updates)?;
    if !(gamma_s > T::zero()) {
        return Err(Error::invalid(format!("sign step must be positive, got {gamma_s}")));
    }
    Ok(per_coordinate(updates, |col| gamma_s * sign(col.iter().map(|&v| sign(v)).sum::<T>())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<ParamVector<f64>> {
        v.iter().map(|&x| ParamVector::from_vec(vec![x, -x])).collect()
    }

    #[test]
    fn trimmed_mean_examples() {
        let out = trimmed_mean(&col(&[0.0, 1.0, 2.0, 3.0, 10.0]), 1).unwrap();
        assert_eq!(&*out, &[2.0, -2.0]);
        let out = trimmed_mean(&col(&[1.0, 2.0, 6.0]), 0).unwrap();
        assert_eq!(&*out, &[3.0, -3.0]);
        assert!(trimmed_mean(&col(&[1.0, 2.0, 3.0, 4.0]), 2).is_err());
    }

    #[test]
    fn median_examples() {
        assert_eq!(&*coordinate_median(&col(&[1.0, 2.0, 100.0])).unwrap(), &[2.0, -2.0]);
        assert_eq!(&*coordinate_median(&col(&[4.5])).unwrap(), &[4.5, -4.5]);
        assert_eq!(&*coordinate_median(&col(&[1.0, 3.0])).unwrap(), &[2.0, -2.0]);
    }

    #[test]
    fn sign_examples() {
        assert_eq!(&*sign_aggregate(&col(&[0.3, 2.0, -1.0]), 0.5).unwrap(), &[0.5, -0.5]);
        assert_eq!(&*sign_aggregate(&col(&[0.3, -2.0]), 0.5).unwrap(), &[0.0, 0.0]);
        assert_eq!(&*sign_aggregate(&col(&[0.0, 0.0, 0.0]), 0.5).unwrap(), &[0.0, 0.0]);
        assert!(sign_aggregate(&col(&[1.0]), 0.0).is_err());
    }
}
