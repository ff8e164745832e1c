use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tensor shape of a single sample, channel-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape { channels, height, width }
    }

    /// A flat feature vector of length `n`.
    pub const fn flat(n: usize) -> Self {
        Shape { channels: 1, height: 1, width: n }
    }

    pub const fn image(height: usize, width: usize) -> Self {
        Shape { channels: 1, height, width }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// User-facing layer description; resolved against an input shape when a
/// [`Network`](super::Network) is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        units: usize,
    },
    /// Stride 1, no padding.
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
    },
    Relu,
    Tanh,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Op {
    Dense { inputs: usize, outputs: usize },
    Conv2d { in_ch: usize, out_ch: usize, kh: usize, kw: usize },
    Relu,
    Tanh,
    Flatten,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    pub op: Op,
    pub offset: usize,
    pub n_params: usize,
    pub in_shape: Shape,
    pub out_shape: Shape,
}

impl Layer {
    pub fn resolve(spec: &LayerSpec, in_shape: Shape, offset: usize) -> Result<Layer> {
        let (op, n_params, out_shape) = match *spec {
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::invalid("dense layer needs at least one unit"));
                }
                let inputs = in_shape.len();
                (Op::Dense { inputs, outputs: units }, inputs * units + units, Shape::flat(units))
            }
            LayerSpec::Conv2d { filters, kernel: [kh, kw] } => {
                if filters == 0 || kh == 0 || kw == 0 {
                    return Err(Error::invalid("conv2d needs positive filters and kernel"));
                }
                if kh > in_shape.height || kw > in_shape.width {
                    return Err(Error::invalid(format!("conv2d kernel {kh}x{kw} larger than input {in_shape}")));
                }
                let in_ch = in_shape.channels;
                let out = Shape::new(filters, in_shape.height - kh + 1, in_shape.width - kw + 1);
                (Op::Conv2d { in_ch, out_ch: filters, kh, kw }, filters * in_ch * kh * kw + filters, out)
            }
            LayerSpec::Relu => (Op::Relu, 0, in_shape),
            LayerSpec::Tanh => (Op::Tanh, 0, in_shape),
            LayerSpec::Flatten => (Op::Flatten, 0, Shape::flat(in_shape.len())),
        };
        Ok(Layer { op, offset, n_params, in_shape, out_shape })
    }

    /// Fan-in used for the uniform initialization bound.
    pub fn fan_in(&self) -> usize {
        match self.op {
            Op::Dense { inputs, .. } => inputs,
            Op::Conv2d { in_ch, kh, kw, .. } => in_ch * kh * kw,
            _ => 0,
        }
    }

    pub fn forward<T: Scalar>(&self, params: &[T], x: &[T], y: &mut Vec<T>) {
        let w = &params[self.offset..self.offset + self.n_params];
        y.clear();
        match self.op {
            Op::Dense { inputs, outputs } => {
                let (weights, bias) = w.split_at(inputs * outputs);
                y.extend(weights.chunks_exact(inputs).zip(bias).map(|(row, &b)| b + row.iter().zip(x).map(|(&a, &v)| a * v).sum::<T>()));
            }
            Op::Conv2d { in_ch, out_ch, kh, kw } => {
                let (ih, iw) = (self.in_shape.height, self.in_shape.width);
                let (oh, ow) = (self.out_shape.height, self.out_shape.width);
                let (weights, bias) = w.split_at(out_ch * in_ch * kh * kw);
                y.resize(out_ch * oh * ow, T::zero());
                for oc in 0..out_ch {
                    let out = &mut y[oc * oh * ow..(oc + 1) * oh * ow];
                    out.iter_mut().for_each(|v| *v = bias[oc]);
                    for ic in 0..in_ch {
                        let plane = &x[ic * ih * iw..(ic + 1) * ih * iw];
                        let kernel = &weights[(oc * in_ch + ic) * kh * kw..(oc * in_ch + ic + 1) * kh * kw];
                        for kr in 0..kh {
                            for kc in 0..kw {
                                let k = kernel[kr * kw + kc];
                                for r in 0..oh {
                                    let src = &plane[(r + kr) * iw + kc..(r + kr) * iw + kc + ow];
                                    let dst = &mut out[r * ow..(r + 1) * ow];
                                    for (d, &s) in dst.iter_mut().zip(src) {
                                        *d += k * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Relu => y.extend(x.iter().map(|&v| if v < T::zero() { T::zero() } else { v })),
            Op::Tanh => y.extend(x.iter().map(|&v| v.tanh())),
            Op::Flatten => y.extend_from_slice(x),
        }
    }

    /// Propagates `grad_out` (dL/dy) back through the layer. Parameter
    /// gradients are accumulated into `param_grad` when given; the returned
    /// vector is dL/dx.
    pub fn backward<T: Scalar>(&self, params: &[T], x: &[T], y: &[T], grad_out: &[T], param_grad: Option<&mut [T]>) -> Vec<T> {
        let w = &params[self.offset..self.offset + self.n_params];
        match self.op {
            Op::Dense { inputs, outputs } => {
                let (weights, _) = w.split_at(inputs * outputs);
                if let Some(pg) = param_grad {
                    let pg = &mut pg[self.offset..self.offset + self.n_params];
                    let (gw, gb) = pg.split_at_mut(inputs * outputs);
                    for (o, &g) in grad_out.iter().enumerate() {
                        if g == T::zero() {
                            continue;
                        }
                        for (a, &v) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(x) {
                            *a += g * v;
                        }
                        gb[o] += g;
                    }
                }
                let mut dx = vec![T::zero(); inputs];
                for (row, &g) in weights.chunks_exact(inputs).zip(grad_out) {
                    if g == T::zero() {
                        continue;
                    }
                    for (d, &a) in dx.iter_mut().zip(row) {
                        *d += a * g;
                    }
                }
                dx
            }
            Op::Conv2d { in_ch, out_ch, kh, kw } => {
                let (ih, iw) = (self.in_shape.height, self.in_shape.width);
                let (oh, ow) = (self.out_shape.height, self.out_shape.width);
                let (weights, _) = w.split_at(out_ch * in_ch * kh * kw);
                let mut dx = vec![T::zero(); in_ch * ih * iw];
                let mut pg = param_grad.map(|pg| &mut pg[self.offset..self.offset + self.n_params]);
                for oc in 0..out_ch {
                    let go = &grad_out[oc * oh * ow..(oc + 1) * oh * ow];
                    if let Some(pg) = pg.as_deref_mut() {
                        pg[out_ch * in_ch * kh * kw + oc] += go.iter().copied().sum::<T>();
                    }
                    for ic in 0..in_ch {
                        let kbase = (oc * in_ch + ic) * kh * kw;
                        let plane = &x[ic * ih * iw..(ic + 1) * ih * iw];
                        let dplane = &mut dx[ic * ih * iw..(ic + 1) * ih * iw];
                        for kr in 0..kh {
                            for kc in 0..kw {
                                let k = weights[kbase + kr * kw + kc];
                                let mut acc = T::zero();
                                for r in 0..oh {
                                    let g = &go[r * ow..(r + 1) * ow];
                                    let start = (r + kr) * iw + kc;
                                    let src = &plane[start..start + ow];
                                    acc += g.iter().zip(src).map(|(&a, &b)| a * b).sum::<T>();
                                    for (d, &gv) in dplane[start..start + ow].iter_mut().zip(g) {
                                        *d += k * gv;
                                    }
                                }
                                if let Some(pg) = pg.as_deref_mut() {
                                    pg[kbase + kr * kw + kc] += acc;
                                }
                            }
                        }
                    }
                }
                dx
            }
            Op::Relu => x.iter().zip(grad_out).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect(),
            Op::Tanh => y.iter().zip(grad_out).map(|(&t, &g)| g * (T::one() - t * t)).collect(),
            Op::Flatten => grad_out.to_vec(),
        }
    }
}
