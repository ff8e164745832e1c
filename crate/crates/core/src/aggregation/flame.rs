//! Cosine-distance clustering, median-norm clipping and Gaussian smoothing.

use rand_distr::{Distribution, Normal};

use super::basic::{clip_factor, mean};
use super::coordinate::median_of;
use super::{validate, AggregationOutcome, Annotation};
use crate::error::{Error, Result};
use crate::nn::ParamVector;
use crate::rng;
use crate::scalar::{total_cmp, Scalar};

/// `1 - cos(a, b)`; a zero vector has cosine 0 with everything.
pub fn cosine_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    let na = crate::nn::norm(a);
    let nb = crate::nn::norm(b);
    if na == T::zero() || nb == T::zero() {
        return T::one();
    }
    T::one() - crate::nn::dot(a, b) / (na * nb)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop] = keep;
        self.size[keep] += self.size[drop];
    }
}

/// Single-linkage clustering on cosine distance, merged in increasing
/// distance order until at most two groups remain. Returns the cluster
/// labels (the smallest member index of each cluster) and the label of the
/// group holding at least `n / 2 + 1` updates, or `None` if neither group
/// does.
pub fn majority_cluster<T: Scalar>(updates: &[ParamVector<T>]) -> (Vec<usize>, Option<usize>) {
    let n = updates.len();
    let need = n / 2 + 1;
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            edges.push((cosine_distance(&updates[a], &updates[b]), a, b));
        }
    }
    edges.sort_by(|x, y| total_cmp(&x.0, &y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut uf = UnionFind::new(n);
    let mut components = n;
    let mut i = 0;
    while components > 2 && i < edges.len() && !edges[i].0.is_nan() {
        let level = edges[i].0;
        while i < edges.len() && edges[i].0 == level {
            if uf.find(edges[i].1) != uf.find(edges[i].2) {
                uf.union(edges[i].1, edges[i].2);
                components -= 1;
            }
            i += 1;
        }
    }
    let labels: Vec<usize> = (0..n).map(|i| uf.find(i)).collect();
    let best = (0..n).filter(|&r| labels[r] == r).max_by(|&a, &b| uf.size[a].cmp(&uf.size[b]).then(b.cmp(&a)));
    let majority = best.filter(|&r| uf.size[r] >= need);
    (labels, majority)
}

/// FLAME aggregation: majority cosine group, clip to the median norm of
/// the accepted updates, average, add `N(0, (lambda * median)^2)` noise.
pub fn flame<T: Scalar>(updates: &[ParamVector<T>], lambda: T, seed: u64) -> Result<AggregationOutcome<T>> {
    validate(updates)?;
    let n = updates.len();
    if n < 3 {
        return Err(Error::invalid(format!("flame needs at least 3 updates, got {n}")));
    }
    if !(lambda >= T::zero()) || !lambda.is_finite() {
        return Err(Error::invalid(format!("flame noise scale must be non-negative, got {lambda}")));
    }
    let (labels, majority) = majority_cluster(updates);
    let accepted: Vec<usize> = match majority {
        Some(label) => (0..n).filter(|&i| labels[i] == label).collect(),
        None => {
            log::warn!("flame found no majority cluster; accepting all {n} updates");
            (0..n).collect()
        }
    };
    let mut norms: Vec<T> = accepted.iter().map(|&i| updates[i].norm()).collect();
    let median = median_of(&mut norms);
    let mut annotations: Vec<Annotation<T>> = labels.iter().map(|&l| Annotation { cluster: Some(l), ..Annotation::default() }).collect();
    let clipped: Vec<ParamVector<T>> = accepted
        .iter()
        .map(|&i| {
            let f = if median > T::zero() { clip_factor(&updates[i], median) } else { T::zero() };
            annotations[i].clip_factor = Some(f);
            updates[i].scaled(f)
        })
        .collect();
    let mut delta = mean(&clipped);
    let sigma = (lambda * median).as_f64();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::NumericFailure(e.to_string()))?;
        let mut r = rng::stream(seed, &[rng::tag::AGGREGATOR]);
        for v in delta.iter_mut() {
            *v += T::lit(normal.sample(&mut r));
        }
    }
    Ok(AggregationOutcome { global_delta: delta, accepted, annotations })
}
