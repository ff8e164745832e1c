use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::layer::{Layer, LayerSpec, Op, Shape};
use super::param::ParamVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Layered classifier (or generator body) over one flat parameter vector.
///
/// The loss attached to classifiers is softmax cross-entropy averaged over
/// the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input: Shape,
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    params: ParamVector<T>,
}

/// Per-layer activations of one forward pass: `acts[0]` is the input and
/// `acts[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("trace holds at least the input")
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a network with every parameter set to zero.
    pub fn zeros(input: Shape, specs: &[LayerSpec]) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::invalid("network input shape is empty"));
        }
        if specs.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        let mut offset = 0;
        for spec in specs {
            let layer = Layer::resolve(spec, shape, offset)?;
            offset += layer.n_params;
            shape = layer.out_shape;
            layers.push(layer);
        }
        Ok(Network { input, specs: specs.to_vec(), layers, params: ParamVector::zeros(offset) })
    }

    /// Builds a network with weights and biases drawn from
    /// `U(-sqrt(1/fan_in), +sqrt(1/fan_in))`.
    pub fn new<R: Rng + ?Sized>(input: Shape, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input, specs)?;
        for layer in &net.layers {
            if layer.n_params == 0 {
                continue;
            }
            let bound = (1.0 / layer.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut net.params[layer.offset..layer.offset + layer.n_params] {
                *p = T::lit(dist.sample(rng));
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_shape.len())
    }

    pub fn num_params(&self) -> usize {
        self.params.dim()
    }

    /// Per-layer parameter counts, in layer order.
    pub fn layer_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.n_params).collect()
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    /// Copies the parameters out as a flat vector.
    pub fn flatten(&self) -> ParamVector<T> {
        self.params.clone()
    }

    /// Returns a network with this architecture and the given parameters.
    pub fn unflatten(&self, params: ParamVector<T>) -> Result<Self> {
        if params.dim() != self.num_params() {
            return Err(Error::ShapeMismatch { expected: self.num_params(), got: params.dim() });
        }
        Ok(Network { params, ..self.clone_arch() })
    }

    pub fn set_params(&mut self, params: ParamVector<T>) -> Result<()> {
        if params.dim() != self.num_params() {
            return Err(Error::ShapeMismatch { expected: self.num_params(), got: params.dim() });
        }
        self.params = params;
        Ok(())
    }

    fn clone_arch(&self) -> Self {
        Network { input: self.input, specs: self.specs.clone(), layers: self.layers.clone(), params: ParamVector::default() }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input.len() {
            return Err(Error::ShapeMismatch { expected: self.input.len(), got: x.len() });
        }
        Ok(())
    }

    /// Runs one sample through every layer, keeping the activations.
    pub fn trace(&self, x: &[T]) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut y = Vec::with_capacity(layer.out_shape.len());
            layer.forward(&self.params, acts.last().unwrap(), &mut y);
            acts.push(y);
        }
        Ok(Trace { acts })
    }

    /// Raw network output (logits for a classifier).
    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward(&self.params, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Softmax probabilities for every sample of the batch.
    pub fn forward(&self, batch: &[&[T]]) -> Result<Vec<Vec<T>>> {
        batch
            .iter()
            .map(|x| {
                let z = self.logits(x)?;
                check_finite(&z)?;
                Ok(softmax(&z))
            })
            .collect()
    }

    pub fn predict(&self, x: &[T]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Activations feeding the final dense layer (the last hidden
    /// representation). Falls back to the input for a single-layer network.
    pub fn penultimate(&self, x: &[T]) -> Result<Vec<T>> {
        let last_dense = self.layers.iter().rposition(|l| matches!(l.op, Op::Dense { .. })).unwrap_or(0);
        let trace = self.trace(x)?;
        Ok(trace.acts[last_dense].clone())
    }

    /// Back-propagates `grad_out` (gradient w.r.t. the network output) through
    /// a recorded trace. Parameter gradients are accumulated into
    /// `param_grad` when given; returns the gradient w.r.t. the input.
    pub fn backward(&self, trace: &Trace<T>, grad_out: &[T], mut param_grad: Option<&mut [T]>) -> Vec<T> {
        let mut g = grad_out.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer.backward(&self.params, &trace.acts[i], &trace.acts[i + 1], &g, param_grad.as_deref_mut());
        }
        g
    }

    fn check_labels(&self, batch: &[&[T]], labels: &[usize]) -> Result<()> {
        if batch.len() != labels.len() {
            return Err(Error::ShapeMismatch { expected: batch.len(), got: labels.len() });
        }
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let classes = self.output_dim();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label, classes });
        }
        Ok(())
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss(&self, batch: &[&[T]], labels: &[usize]) -> Result<T> {
        self.check_labels(batch, labels)?;
        let mut total = T::zero();
        for (x, &y) in batch.iter().zip(labels) {
            let z = self.logits(x)?;
            check_finite(&z)?;
            total += cross_entropy(&z, y);
        }
        Ok(total / T::count(batch.len()))
    }

    /// Mean softmax cross-entropy and its gradient w.r.t. the parameters.
    pub fn loss_and_grad(&self, batch: &[&[T]], labels: &[usize]) -> Result<(T, ParamVector<T>)> {
        self.check_labels(batch, labels)?;
        let mut grad = ParamVector::zeros(self.num_params());
        let inv_b = T::one() / T::count(batch.len());
        let mut total = T::zero();
        for (x, &y) in batch.iter().zip(labels) {
            let trace = self.trace(x)?;
            let z = trace.output();
            check_finite(z)?;
            total += cross_entropy(z, y);
            let dz = ce_grad(z, y, inv_b);
            self.backward(&trace, &dz, Some(&mut grad));
        }
        if !grad.is_finite() {
            return Err(Error::NumericFailure("non-finite gradient".into()));
        }
        Ok((total * inv_b, grad))
    }

    /// Mean cross-entropy and its gradient w.r.t. each input sample. The
    /// parameters are only read.
    pub fn input_gradient(&self, batch: &[&[T]], labels: &[usize]) -> Result<(T, Vec<Vec<T>>)> {
        self.check_labels(batch, labels)?;
        let inv_b = T::one() / T::count(batch.len());
        let mut total = T::zero();
        let mut grads = Vec::with_capacity(batch.len());
        for (x, &y) in batch.iter().zip(labels) {
            let trace = self.trace(x)?;
            let z = trace.output();
            check_finite(z)?;
            total += cross_entropy(z, y);
            let dz = ce_grad(z, y, inv_b);
            grads.push(self.backward(&trace, &dz, None));
        }
        Ok((total * inv_b, grads))
    }
}

fn check_finite<T: Scalar>(z: &[T]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericFailure("non-finite activation in forward pass".into()))
    }
}

pub fn softmax<T: Scalar>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

fn cross_entropy<T: Scalar>(z: &[T], label: usize) -> T {
    // clamp the rounding residue so a perfect prediction reports exactly 0
    (log_sum_exp(z) - z[label]).max(T::zero())
}

/// dL/dz for softmax cross-entropy, scaled by `scale`.
fn ce_grad<T: Scalar>(z: &[T], label: usize, scale: T) -> Vec<T> {
    let mut p = softmax(z);
    p[label] -= T::one();
    p.iter_mut().for_each(|v| *v *= scale);
    p
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
