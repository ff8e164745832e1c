//! Minimal deterministic neural-network engine.
//!
//! Dense and stride-1 convolution layers, ReLU/tanh, softmax cross-entropy,
//! hand-written backward passes and momentum SGD. All parameters of a network
//! live in one [`ParamVector`], which is also the unit exchanged between
//! agents and the server.

mod layer;
mod network;
mod optim;
mod param;

pub use layer::{LayerSpec, Shape};
pub use network::{argmax, softmax, Network, Trace};
pub use optim::{Sgd, SgdConfig};
pub(crate) use param::check_dim;
pub use param::{distance, dot, norm, ParamVector};

/// The desk-scale MLP: `input -> hidden -> relu -> classes`.
pub fn mlp_specs(hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::Dense { units: hidden }, LayerSpec::Relu, LayerSpec::Dense { units: classes }]
}

/// The desk-scale CNN: `conv(8, 3x3) -> relu -> flatten -> dense -> relu -> dense`.
pub fn cnn_specs(hidden: usize, classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { filters: 8, kernel: [3, 3] },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: hidden },
        LayerSpec::Relu,
        LayerSpec::Dense { units: classes },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_input(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = Network::<f64>::zeros(Shape::flat(5), &mlp_specs(4, 7)).unwrap();
        let x = [0.3, -1.0, 2.0, 0.0, 9.0];
        let p = net.forward(&[&x]).unwrap();
        for &v in &p[0] {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_dense_picks_first_class() {
        for classes in 2..6 {
            let mut net = Network::<f64>::zeros(Shape::flat(classes), &[LayerSpec::Dense { units: classes }]).unwrap();
            for i in 0..classes {
                net.params_mut()[i * classes + i] = 1.0;
            }
            let mut x = vec![0.0; classes];
            x[0] = 1.0;
            assert_eq!(net.predict(&x).unwrap(), 0);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut r = rng::stream(3, &[]);
        let net = Network::<f64>::new(Shape::image(6, 6), &cnn_specs(5, 4), &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..8).map(|_| random_input(&mut r, 36)).collect();
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        for row in net.forward(&refs).unwrap() {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::<f64>::zeros(Shape::flat(3), &mlp_specs(2, 2)).unwrap();
        assert!(net.forward(&[&[1.0, 2.0]]).is_err());
        assert!(net.loss_and_grad(&[&[1.0, 2.0, 3.0]], &[2]).is_err());
    }

    /// Straight-line 2-layer forward pass reading the flat parameter layout
    /// directly.
    fn naive_two_layer(params: &[f64], x: &[f64], hidden: usize, classes: usize) -> Vec<f64> {
        let d = x.len();
        let w1 = &params[..d * hidden];
        let b1 = &params[d * hidden..d * hidden + hidden];
        let rest = &params[d * hidden + hidden..];
        let w2 = &rest[..hidden * classes];
        let b2 = &rest[hidden * classes..];
        let mut h = vec![0.0; hidden];
        for j in 0..hidden {
            let mut s = b1[j];
            for i in 0..d {
                s += w1[j * d + i] * x[i];
            }
            h[j] = if s > 0.0 { s } else { 0.0 };
        }
        let mut z = vec![0.0; classes];
        for k in 0..classes {
            let mut s = b2[k];
            for j in 0..hidden {
                s += w2[k * hidden + j] * h[j];
            }
            z[k] = s;
        }
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let t: f64 = e.iter().sum();
        e.iter().map(|v| v / t).collect()
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut r = rng::stream(11, &[]);
        let net = Network::<f64>::new(Shape::flat(9), &mlp_specs(6, 4), &mut r).unwrap();
        for _ in 0..20 {
            let x = random_input(&mut r, 9);
            let got = net.forward(&[&x]).unwrap().remove(0);
            let want = naive_two_layer(net.params(), &x, 6, 4);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    /// Central finite differences on `n_coords` random coordinates.
    fn max_fd_rel_error(net: &Network<f64>, xs: &[Vec<f64>], labels: &[usize], n_coords: usize, seed: u64) -> f64 {
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let (_, grad) = net.loss_and_grad(&refs, labels).unwrap();
        let mut r = rng::stream(seed, &[99]);
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for _ in 0..n_coords {
            let i = r.random_range(0..net.num_params());
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (plus.loss(&refs, labels).unwrap() - minus.loss(&refs, labels).unwrap()) / (2.0 * h);
            let err = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-7);
            worst = worst.max(err);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences_mlp() {
        let mut r = rng::stream(5, &[]);
        let net = Network::<f64>::new(Shape::flat(12), &mlp_specs(10, 5), &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..6).map(|_| random_input(&mut r, 12)).collect();
        let labels = [0, 1, 2, 3, 4, 0];
        assert!(max_fd_rel_error(&net, &xs, &labels, 50, 1) < 1e-4);
    }

    #[test]
    fn gradient_matches_finite_differences_cnn() {
        let mut r = rng::stream(6, &[]);
        let net = Network::<f64>::new(Shape::image(7, 6), &cnn_specs(8, 3), &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..4).map(|_| random_input(&mut r, 42)).collect();
        let labels = [2, 0, 1, 2];
        assert!(max_fd_rel_error(&net, &xs, &labels, 50, 2) < 1e-4);
    }

    #[test]
    fn confident_prediction_has_vanishing_loss() {
        let mut net = Network::<f64>::zeros(Shape::flat(2), &[LayerSpec::Dense { units: 2 }]).unwrap();
        // bias only: class 1 logit far above class 0
        net.params_mut()[5] = 800.0;
        let (loss, grad) = net.loss_and_grad(&[&[0.2, 0.7]], &[1]).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn duplicated_batch_same_loss_and_grad() {
        let mut r = rng::stream(8, &[]);
        let net = Network::<f64>::new(Shape::flat(5), &mlp_specs(4, 3), &mut r).unwrap();
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_input(&mut r, 5)).collect();
        let labels = [0, 2, 1];
        let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let doubled: Vec<&[f64]> = refs.iter().flat_map(|x| [*x, *x]).collect();
        let doubled_labels: Vec<usize> = labels.iter().flat_map(|&l| [l, l]).collect();
        let (l1, g1) = net.loss_and_grad(&refs, &labels).unwrap();
        let (l2, g2) = net.loss_and_grad(&doubled, &doubled_labels).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(g1.distance(&g2) < 1e-12);
    }

    #[test]
    fn nan_input_is_numeric_failure() {
        let net = Network::<f64>::zeros(Shape::flat(2), &mlp_specs(2, 2)).unwrap();
        let mut net = net;
        net.params_mut()[0] = 1.0;
        let err = net.loss_and_grad(&[&[f64::NAN, 0.0]], &[0]).unwrap_err();
        assert!(matches!(err, crate::Error::NumericFailure(_)));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let run = || {
            let mut r = rng::stream(21, &[]);
            let mut net = Network::<f64>::new(Shape::flat(4), &mlp_specs(5, 3), &mut r).unwrap();
            let xs: Vec<Vec<f64>> = (0..6).map(|_| random_input(&mut r, 4)).collect();
            let refs: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
            let labels = [0, 1, 2, 0, 1, 2];
            let mut sgd = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.9, weight_decay: 1e-4 });
            for _ in 0..10 {
                let (_, g) = net.loss_and_grad(&refs, &labels).unwrap();
                sgd.step_network(&mut net, &g);
            }
            net.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn f32_network_runs() {
        let mut r = rng::stream(2, &[]);
        let net = Network::<f32>::new(Shape::flat(3), &mlp_specs(4, 2), &mut r).unwrap();
        let p = net.forward(&[&[0.1, 0.2, 0.3]]).unwrap();
        assert!((p[0].iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    proptest! {
        #[test]
        fn unflatten_flatten_roundtrip(values in proptest::collection::vec(-10.0f64..10.0, 43)) {
            // 4*5 + 5 + 5*3 + 3
            let net = Network::<f64>::zeros(Shape::flat(4), &mlp_specs(5, 3)).unwrap();
            let d = net.num_params();
            let pv = ParamVector::from_vec(values);
            let rebuilt = net.unflatten(pv.clone()).unwrap();
            prop_assert_eq!(rebuilt.flatten(), pv);
            prop_assert_eq!(net.layer_param_counts().iter().sum::<usize>(), d);
        }
    }
}
