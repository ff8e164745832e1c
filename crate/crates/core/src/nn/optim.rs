use serde::{Deserialize, Serialize};

use super::{Network, ParamVector};
use crate::scalar::Scalar;

/// Hyperparameters of momentum SGD with L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn plain(lr: f64) -> Self {
        SgdConfig { lr, momentum: 0.0, weight_decay: 0.0 }
    }
}

/// Momentum SGD: `v <- mu * v + (g + wd * theta)`, `theta <- theta - lr * v`.
///
/// The velocity buffer starts at zero on the first step.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    lr: T,
    momentum: T,
    weight_decay: T,
    velocity: Vec<T>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd { lr: T::lit(cfg.lr), momentum: T::lit(cfg.momentum), weight_decay: T::lit(cfg.weight_decay), velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), grad.len(), "gradient dimension must match parameters");
        if self.velocity.len() != params.len() {
            self.velocity = vec![T::zero(); params.len()];
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(self.velocity.iter_mut()) {
            let d = g + self.weight_decay * *p;
            *v = self.momentum * *v + d;
            *p -= self.lr * *v;
        }
    }

    pub fn step_network(&mut self, net: &mut Network<T>, grad: &ParamVector<T>) {
        self.step(net.params_mut(), grad);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = vec![1.0_f64, -2.0, 3.0];
        let mut sgd = Sgd::new(SgdConfig { lr: 0.0, momentum: 0.9, weight_decay: 1e-4 });
        sgd.step(&mut p, &[5.0, 5.0, 5.0]);
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn plain_sgd_is_exact() {
        let mut p = vec![1.0_f64, 2.0];
        let g = [0.5, -4.0];
        Sgd::new(SgdConfig::plain(0.1)).step(&mut p, &g);
        assert_eq!(p, vec![1.0 - 0.1 * 0.5, 2.0 - 0.1 * -4.0]);
    }

    #[test]
    fn momentum_second_displacement() {
        let lr = 0.05;
        let g = [0.3_f64, -1.2];
        let mut p = vec![0.0_f64, 0.0];
        let mut sgd = Sgd::new(SgdConfig { lr, momentum: 0.9, weight_decay: 0.0 });
        sgd.step(&mut p, &g);
        let after_first = p.clone();
        sgd.step(&mut p, &g);
        for i in 0..2 {
            let second = p[i] - after_first[i];
            assert!((second - (-1.9 * lr * g[i])).abs() < 1e-15);
        }
    }
}
