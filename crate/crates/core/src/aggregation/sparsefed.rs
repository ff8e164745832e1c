use super::basic::clipped_fedavg;
use super::{validate, AggregationOutcome};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::{total_cmp, Scalar};

/// Zeroes all but the `k` largest-magnitude coordinates; ties keep the
/// lower index.
pub fn top_k<T: Scalar>(v: &mut [T], k: usize) {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&v[b].abs(), &v[a].abs()).then(a.cmp(&b)));
    for &i in &order[k.min(v.len())..] {
        v[i] = T::zero();
    }
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("sparsefed k must be in 1..={d}, got {k}")));
    }
    Ok(())
}

/// Clip every update to `tau`, average, keep the top `k` coordinates and
/// scale by `gamma`.
pub fn sparsefed<T: Scalar>(updates: &[ParamVector<T>], tau: T, k: usize, gamma: T) -> Result<AggregationOutcome<T>> {
    sparsefed_with_residual(updates, tau, k, gamma, None)
}

/// As [`sparsefed`], but when `residual` is given the dropped coordinates
/// of the (unscaled) clipped mean are carried into the next call.
pub fn sparsefed_with_residual<T: Scalar>(
    updates: &[ParamVector<T>],
    tau: T,
    k: usize,
    gamma: T,
    residual: Option<&mut ParamVector<T>>,
) -> Result<AggregationOutcome<T>> {
    let d = validate(updates)?;
    check_k(k, d)?;
    let mut out = clipped_fedavg(updates, tau, T::one())?;
    let sparse = match residual {
        Some(acc) => {
            if acc.dim() != d {
                *acc = ParamVector::zeros(d);
            }
            acc.axpy(T::one(), &out.global_delta);
            let mut kept = acc.clone();
            top_k(&mut kept, k);
            acc.axpy(-T::one(), &kept);
            kept
        }
        None => {
            let mut kept = out.global_delta.clone();
            top_k(&mut kept, k);
            kept
        }
    };
    out.global_delta = sparse.scaled(gamma);
    Ok(out)
}
