use super::{validate, AggregationOutcome};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::{total_cmp, Scalar};

/// Coordinate-wise mean of the updates.
pub(crate) fn mean<T: Scalar>(updates: &[ParamVector<T>]) -> ParamVector<T> {
    let mut out = ParamVector::zeros(updates[0].dim());
    for u in updates {
        out.axpy(T::one(), u);
    }
    out.scale(T::one() / T::count(updates.len()));
    out
}

/// `gamma * mean(updates)`, accepting every update.
pub fn fedavg<T: Scalar>(updates: &[ParamVector<T>], gamma: T) -> Result<AggregationOutcome<T>> {
    validate(updates)?;
    let mut delta = mean(updates);
    delta.scale(gamma);
    Ok(AggregationOutcome::accept_all(delta, updates.len()))
}

/// Factor `min(1, tau / |u|)`; 1 for the zero vector.
pub fn clip_factor<T: Scalar>(u: &[T], tau: T) -> T {
    let n = crate::nn::norm(u);
    if n > tau {
        tau / n
    } else {
        T::one()
    }
}

/// Scales every update with norm above `tau` down to norm `tau`.
pub fn norm_clip<T: Scalar>(updates: &[ParamVector<T>], tau: T) -> Result<Vec<ParamVector<T>>> {
    check_tau(tau)?;
    Ok(updates.iter().map(|u| u.scaled(clip_factor(u, tau))).collect())
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if tau > T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("clip bound must be positive, got {tau}")))
    }
}

/// Round-adaptive clip bound: mean norm after discarding one largest and one
/// smallest update. With fewer than three updates, the plain mean norm.
pub fn adaptive_clip_bound<T: Scalar>(updates: &[ParamVector<T>]) -> Result<T> {
    validate(updates)?;
    let mut norms: Vec<T> = updates.iter().map(|u| u.norm()).collect();
    norms.sort_by(total_cmp);
    let kept = if norms.len() >= 3 { &norms[1..norms.len() - 1] } else { &norms[..] };
    Ok(kept.iter().copied().sum::<T>() / T::count(kept.len()))
}

/// Clip to `tau`, then `gamma * mean`, annotating each clip factor.
pub(crate) fn clipped_fedavg<T: Scalar>(updates: &[ParamVector<T>], tau: T, gamma: T) -> Result<AggregationOutcome<T>> {
    validate(updates)?;
    check_tau(tau)?;
    let factors: Vec<T> = updates.iter().map(|u| clip_factor(u, tau)).collect();
    let clipped: Vec<ParamVector<T>> = updates.iter().zip(&factors).map(|(u, &f)| u.scaled(f)).collect();
    let mut out = fedavg(&clipped, gamma)?;
    for (a, f) in out.annotations.iter_mut().zip(factors) {
        a.clip_factor = Some(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector<f64> {
        ParamVector::from_vec(v.to_vec())
    }

    #[test]
    fn fedavg_examples() {
        let out = fedavg(&[pv(&[1.0, 1.0]), pv(&[3.0, 3.0])], 1.0).unwrap();
        assert_eq!(&*out.global_delta, &[2.0, 2.0]);
        assert_eq!(out.accepted, vec![0, 1]);
        assert_eq!(&*fedavg(&[pv(&[0.5, -2.0])], 1.0).unwrap().global_delta, &[0.5, -2.0]);
        assert_eq!(&*fedavg(&[pv(&[0.5, -2.0]), pv(&[1.0, 1.0])], 0.0).unwrap().global_delta, &[0.0, 0.0]);
    }

    #[test]
    fn fedavg_rejects_mismatch() {
        assert!(fedavg(&[pv(&[1.0]), pv(&[1.0, 2.0])], 1.0).is_err());
        assert!(fedavg::<f64>(&[], 1.0).is_err());
    }

    #[test]
    fn clip_examples() {
        let out = norm_clip(&[pv(&[3.0, 4.0]), pv(&[0.3, 0.4]), pv(&[0.0, 0.0])], 1.0).unwrap();
        assert!((out[0][0] - 0.6).abs() < 1e-15 && (out[0][1] - 0.8).abs() < 1e-15);
        assert_eq!(&*out[1], &[0.3, 0.4]);
        assert_eq!(&*out[2], &[0.0, 0.0]);
        assert!(norm_clip(&[pv(&[1.0])], 0.0).is_err());
    }

    #[test]
    fn adaptive_bound_examples() {
        let ups: Vec<_> = [1.0, 2.0, 3.0, 4.0, 10.0].iter().map(|&n| pv(&[0.0, n])).collect();
        assert!((adaptive_clip_bound(&ups).unwrap() - 3.0).abs() < 1e-15);
        let same: Vec<_> = (0..4).map(|_| pv(&[3.0, 4.0])).collect();
        assert!((adaptive_clip_bound(&same).unwrap() - 5.0).abs() < 1e-15);
        let two = [pv(&[1.0]), pv(&[-3.0])];
        assert!((adaptive_clip_bound(&two).unwrap() - 2.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn clipped_norms_bounded(vals in proptest::collection::vec(-100.0f64..100.0, 12), tau in 0.01f64..50.0) {
            let ups: Vec<_> = vals.chunks(3).map(pv).collect();
            for (c, u) in norm_clip(&ups, tau).unwrap().iter().zip(&ups) {
                prop_assert!(c.norm() <= tau * (1.0 + 1e-12));
                if u.norm() <= tau {
                    prop_assert_eq!(c, u);
                }
            }
        }
    }
}
