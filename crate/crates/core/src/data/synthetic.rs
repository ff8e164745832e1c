use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::rng::{self, tag};
use crate::scalar::Scalar;

/// `classes` Gaussian clusters clipped to the unit cube.
///
/// Each cluster center is a sparse prototype: `max(1, round(density * d))`
/// randomly chosen coordinates are drawn uniformly from `[0.5, 1]` and the
/// rest are zero, which gives image-like inputs with a dark background.
/// Sample `i` has label `i % classes`, so any prefix of length
/// `k * classes` is class-balanced.
pub fn gen_synthetic<T: Scalar>(classes: usize, n: usize, shape: Shape, spread: f64, density: f64, seed: u64) -> Result<Dataset<T>> {
    if classes < 2 {
        return Err(Error::invalid("synthetic data needs at least two classes"));
    }
    if n < classes {
        return Err(Error::invalid(format!("need at least {classes} samples, got {n}")));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::invalid(format!("spread must be positive, got {spread}")));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::invalid(format!("density must be in (0, 1], got {density}")));
    }
    let dim = shape.len();
    let active = ((density * dim as f64).round() as usize).clamp(1, dim);
    let mut r = rng::stream(seed, &[tag::DATA]);
    let mut centers = vec![0.0f64; classes * dim];
    for c in 0..classes {
        for j in index::sample(&mut r, dim, active) {
            centers[c * dim + j] = r.random_range(0.5..=1.0);
        }
    }
    let mut features = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let center = &centers[c * dim..(c + 1) * dim];
        features.extend(center.iter().map(|&m| {
            let z: f64 = StandardNormal.sample(&mut r);
            T::lit((m + spread * z).clamp(0.0, 1.0))
        }));
        labels.push(c);
    }
    Dataset::new(shape, classes, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mlp_specs, LayerSpec, Network, Sgd, SgdConfig};

    #[test]
    fn deterministic_per_seed() {
        let a = gen_synthetic::<f64>(4, 40, Shape::flat(6), 0.1, 0.5, 9).unwrap();
        let b = gen_synthetic::<f64>(4, 40, Shape::flat(6), 0.1, 0.5, 9).unwrap();
        let c = gen_synthetic::<f64>(4, 40, Shape::flat(6), 0.1, 0.5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(gen_synthetic::<f64>(1, 10, Shape::flat(2), 0.1, 0.5, 0).is_err());
        assert!(gen_synthetic::<f64>(5, 4, Shape::flat(2), 0.1, 0.5, 0).is_err());
        assert!(gen_synthetic::<f64>(2, 10, Shape::flat(2), 0.0, 0.5, 0).is_err());
        assert!(gen_synthetic::<f64>(2, 10, Shape::flat(2), -1.0, 0.5, 0).is_err());
        assert!(gen_synthetic::<f64>(2, 10, Shape::flat(2), 0.1, 0.0, 0).is_err());
        assert!(gen_synthetic::<f64>(2, 10, Shape::flat(2), 0.1, 1.5, 0).is_err());
    }

    fn train(net: &mut Network<f64>, ds: &Dataset<f64>, steps: usize, lr: f64, batch: usize) {
        let mut sgd = Sgd::new(SgdConfig { lr, momentum: 0.9, weight_decay: 0.0 });
        for s in 0..steps {
            let idx: Vec<usize> = (0..batch).map(|k| (s * batch + k) % ds.len()).collect();
            let xs: Vec<&[f64]> = idx.iter().map(|&i| ds.sample(i)).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| ds.label(i)).collect();
            let (_, g) = net.loss_and_grad(&xs, &ys).unwrap();
            sgd.step_network(net, &g);
        }
    }

    fn accuracy(net: &Network<f64>, ds: &Dataset<f64>) -> f64 {
        let hits = ds.iter().filter(|(x, y)| net.predict(x).unwrap() == *y).count();
        hits as f64 / ds.len() as f64
    }

    #[test]
    fn near_point_masses_are_linearly_separable() {
        let ds = gen_synthetic::<f64>(2, 200, Shape::flat(8), 1e-9, 0.25, 4).unwrap();
        let mut r = rng::stream(4, &[]);
        let mut net = Network::new(Shape::flat(8), &[LayerSpec::Dense { units: 2 }], &mut r).unwrap();
        train(&mut net, &ds, 200, 0.1, 20);
        assert_eq!(accuracy(&net, &ds), 1.0);
    }

    #[test]
    fn mlp_fits_ten_class_task() {
        let ds = gen_synthetic::<f64>(10, 2000, Shape::flat(32), 0.1, 0.25, 1).unwrap();
        let mut r = rng::stream(1, &[tag::MODEL_INIT]);
        let mut net = Network::new(Shape::flat(32), &mlp_specs(32, 10), &mut r).unwrap();
        train(&mut net, &ds, 200, 0.1, 32);
        assert!(accuracy(&net, &ds) >= 0.95);
    }
}
