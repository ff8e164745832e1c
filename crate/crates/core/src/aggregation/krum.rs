use super::basic::mean;
use super::{validate, AggregationOutcome, Annotation};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::scalar::{total_cmp, Scalar};

fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Krum scores over the candidates `members` (indices into `updates`): sum of
/// squared distances to the `|members| - f - 1` nearest other candidates.
fn scores<T: Scalar>(updates: &[ParamVector<T>], members: &[usize], f: usize) -> Vec<T> {
    let m = members.len();
    let neighbours = m - f - 1;
    let mut dist = vec![T::zero(); m * m];
    for a in 0..m {
        for b in a + 1..m {
            let d = squared_distance(&updates[members[a]], &updates[members[b]]);
            dist[a * m + b] = d;
            dist[b * m + a] = d;
        }
    }
    (0..m)
        .map(|a| {
            let mut row: Vec<T> = (0..m).filter(|&b| b != a).map(|b| dist[a * m + b]).collect();
            row.sort_by(total_cmp);
            row[..neighbours].iter().copied().sum()
        })
        .collect()
}

/// Position of the smallest score; the earliest position wins ties.
fn argmin<T: Scalar>(scores: &[T]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if total_cmp(s, &scores[best]).is_lt() {
            best = i;
        }
    }
    best
}

fn check_krum(n: usize, f: usize) -> Result<()> {
    if n < f + 3 {
        return Err(Error::invalid(format!("krum with f = {f} needs at least {} updates, got {n}", f + 3)));
    }
    Ok(())
}

/// Index of the update with the smallest Krum score. Ties go to the lowest
/// index.
pub fn krum_select<T: Scalar>(updates: &[ParamVector<T>], f: usize) -> Result<usize> {
    validate(updates)?;
    check_krum(updates.len(), f)?;
    let members: Vec<usize> = (0..updates.len()).collect();
    Ok(argmin(&scores(updates, &members, f)))
}

/// Repeated Krum: select, remove, rescore, until `c` updates are selected;
/// returns `gamma * mean(selected)`. Feasible for `c <= n - f - 1`; `c = n`
/// selects everything.
pub fn multi_krum<T: Scalar>(updates: &[ParamVector<T>], f: usize, c: usize, gamma: T) -> Result<AggregationOutcome<T>> {
    validate(updates)?;
    let n = updates.len();
    if c == 0 || c > n {
        return Err(Error::invalid(format!("multi-krum selection size {c} outside 1..={n}")));
    }
    let mut selected = Vec::with_capacity(c);
    let mut annotations = vec![Annotation::default(); n];
    if c == n {
        selected.extend(0..n);
    } else {
        // the last pick scores |R| = n - c + 1 candidates against |R| - f - 1 >= 1 neighbours
        if c + f + 1 > n {
            return Err(Error::invalid(format!("multi-krum needs c <= n - f - 1 (n = {n}, f = {f}, c = {c})")));
        }
        let mut remaining: Vec<usize> = (0..n).collect();
        while selected.len() < c {
            let s = scores(updates, &remaining, f);
            if selected.is_empty() {
                for (&i, &score) in remaining.iter().zip(&s) {
                    annotations[i].krum_score = Some(score);
                }
            }
            let pick = argmin(&s);
            selected.push(remaining.remove(pick));
        }
        selected.sort_unstable();
    }
    let chosen: Vec<ParamVector<T>> = selected.iter().map(|&i| updates[i].clone()).collect();
    let mut delta = mean(&chosen);
    delta.scale(gamma);
    Ok(AggregationOutcome { global_delta: delta, accepted: selected, annotations })
}
