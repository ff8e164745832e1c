//! Sample-specific trigger generator.
//!
//! The generator is a small encoder-decoder whose raw output
//! `r = scale * tanh(net(x))` is projected onto the l2 ball of radius
//! `epsilon`: `noise = r / max(1, |r| / epsilon)`. The poisoned sample is
//! `clamp(x + noise, 0, 1)`. The projection is part of the forward pass, so
//! training sees exactly the noise that is applied.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{norm, LayerSpec, Network, ParamVector, Sgd, SgdConfig, Shape};
use crate::scalar::Scalar;

/// All-to-one labelling rule: every poisoned sample is relabelled `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackTargeting {
    pub target: usize,
}

impl AttackTargeting {
    pub fn new(target: usize, classes: usize) -> Result<Self> {
        if target >= classes {
            return Err(Error::InvalidLabel { label: target, classes });
        }
        Ok(AttackTargeting { target })
    }

    #[inline]
    pub fn relabel(&self, _label: usize) -> usize {
        self.target
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerGenerator<T> {
    net: Network<T>,
    epsilon: T,
    output_scale: T,
}

/// Stage-I optimisation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

impl<T: Scalar> TriggerGenerator<T> {
    /// Dense autoencoder `d -> hidden -> d` with tanh output.
    pub fn new<R: Rng + ?Sized>(shape: Shape, hidden: usize, epsilon: f64, output_scale: f64, rng: &mut R) -> Result<Self> {
        let specs = [LayerSpec::Dense { units: hidden }, LayerSpec::Relu, LayerSpec::Dense { units: shape.len() }, LayerSpec::Tanh];
        Self::from_network(Network::new(shape, &specs, rng)?, epsilon, output_scale)
    }

    pub fn from_network(net: Network<T>, epsilon: f64, output_scale: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("trigger norm bound must be positive, got {epsilon}")));
        }
        if !(output_scale > 0.0 && output_scale.is_finite()) {
            return Err(Error::invalid(format!("generator output scale must be positive, got {output_scale}")));
        }
        if net.output_dim() != net.input_shape().len() {
            return Err(Error::invalid("generator output must match its input shape"));
        }
        Ok(TriggerGenerator { net, epsilon: T::lit(epsilon), output_scale: T::lit(output_scale) })
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn shape(&self) -> Shape {
        self.net.input_shape()
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn params(&self) -> &ParamVector<T> {
        self.net.params()
    }

    pub fn set_params(&mut self, params: ParamVector<T>) -> Result<()> {
        self.net.set_params(params)
    }

    /// Unprojected output `scale * tanh(net(x))`.
    pub fn raw(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = self.net.logits(x)?;
        out.iter_mut().for_each(|v| *v *= self.output_scale);
        Ok(out)
    }

    /// Trigger noise for `x`, with l2 norm at most `epsilon`.
    pub fn generate(&self, x: &[T]) -> Result<Vec<T>> {
        let mut r = self.raw(x)?;
        let s = projection_divisor(&r, self.epsilon);
        r.iter_mut().for_each(|v| *v /= s);
        Ok(r)
    }

    /// Poisoned sample `clamp(x + generate(x), 0, 1)`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        let noise = self.generate(x)?;
        Ok(x.iter().zip(&noise).map(|(&a, &n)| clamp01(a + n)).collect())
    }

    /// Mean target-label cross-entropy of `classifier` on the poisoned batch.
    pub fn backdoor_loss(&self, classifier: &Network<T>, xs: &[&[T]], targeting: AttackTargeting) -> Result<T> {
        let poisoned = xs.iter().map(|x| self.apply(x)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[T]> = poisoned.iter().map(Vec::as_slice).collect();
        classifier.loss(&refs, &vec![targeting.target; refs.len()])
    }

    /// Backdoor loss and its gradient w.r.t. the generator parameters, with
    /// `classifier` held fixed.
    pub fn loss_and_grad(&self, classifier: &Network<T>, xs: &[&[T]], targeting: AttackTargeting) -> Result<(T, ParamVector<T>)> {
        let mut traces = Vec::with_capacity(xs.len());
        let mut noises = Vec::with_capacity(xs.len());
        let mut poisoned = Vec::with_capacity(xs.len());
        for x in xs {
            let trace = self.net.trace(x)?;
            let raw: Vec<T> = trace.output().iter().map(|&v| v * self.output_scale).collect();
            let s = projection_divisor(&raw, self.epsilon);
            let noise: Vec<T> = raw.iter().map(|&v| v / s).collect();
            poisoned.push(x.iter().zip(&noise).map(|(&a, &n)| clamp01(a + n)).collect::<Vec<T>>());
            traces.push((trace, raw));
            noises.push(noise);
        }
        let refs: Vec<&[T]> = poisoned.iter().map(Vec::as_slice).collect();
        let (loss, grads_in) = classifier.input_gradient(&refs, &vec![targeting.target; refs.len()])?;

        let mut grad = ParamVector::zeros(self.net.num_params());
        for (((x, (trace, raw)), noise), g_in) in xs.iter().zip(&traces).zip(&noises).zip(grads_in) {
            // clamp passes gradient only where it did not bind
            let g_noise: Vec<T> = x
                .iter()
                .zip(noise)
                .zip(&g_in)
                .map(|((&a, &n), &g)| {
                    let v = a + n;
                    if v >= T::zero() && v <= T::one() {
                        g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let mut g_out = projection_backward(raw, self.epsilon, &g_noise);
            g_out.iter_mut().for_each(|v| *v *= self.output_scale);
            self.net.backward(trace, &g_out, Some(&mut grad));
        }
        if !grad.is_finite() {
            return Err(Error::NumericFailure("non-finite generator gradient".into()));
        }
        Ok((loss, grad))
    }
}

/// Stage I: optimise the generator so that the fixed `classifier` sends
/// poisoned samples of `data` to the target label. `classifier` is only read.
pub fn train_generator<T: Scalar, R: Rng + ?Sized>(
    gen: &TriggerGenerator<T>,
    classifier: &Network<T>,
    data: &Dataset<T>,
    targeting: AttackTargeting,
    cfg: &GeneratorTraining,
    rng: &mut R,
) -> Result<TriggerGenerator<T>> {
    let mut gen = gen.clone();
    if cfg.epochs == 0 || data.is_empty() {
        return Ok(gen);
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("generator batch size must be positive"));
    }
    let mut opt = Sgd::new(cfg.sgd);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[T]> = chunk.iter().map(|&i| data.sample(i)).collect();
            let (_, g) = gen.loss_and_grad(classifier, &xs, targeting).map_err(|e| e.in_epoch(epoch))?;
            opt.step(gen.net.params_mut(), &g);
        }
    }
    Ok(gen)
}

#[inline]
fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// `max(1, |r| / epsilon)`
fn projection_divisor<T: Scalar>(r: &[T], epsilon: T) -> T {
    (norm(r) / epsilon).max(T::one())
}

/// Vector-Jacobian product of `r -> r / max(1, |r|/eps)`. On the ball's
/// boundary the inactive (identity) branch is taken.
fn projection_backward<T: Scalar>(raw: &[T], epsilon: T, g: &[T]) -> Vec<T> {
    let n = norm(raw);
    if n <= epsilon {
        return g.to_vec();
    }
    // d/dr [eps * r / |r|] = eps / |r| * (I - r r^T / |r|^2)
    let proj = raw.iter().zip(g).map(|(&a, &b)| a * b).sum::<T>() / (n * n);
    let k = epsilon / n;
    raw.iter().zip(g).map(|(&a, &b)| k * (b - a * proj)).collect()
}
