use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::scalar::Scalar;

/// Window and stabiliser constants for [`ssim_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimOptions {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// Zero-pad so every pixel centres a window (`true`), or use only
    /// windows that fit inside the image (`false`).
    pub same_padding: bool,
}

impl Default for SsimOptions {
    fn default() -> Self {
        SsimOptions { window: 11, sigma: 1.5, c1: 0.01 * 0.01, c2: 0.03 * 0.03, same_padding: true }
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter of one channel; output is `oh x ow`.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64], same: bool) -> (Vec<f64>, usize, usize) {
    let ks = k.len();
    let pad = if same { ks / 2 } else { 0 };
    let (oh, ow) = if same { (h, w) } else { (h + 1 - ks, w + 1 - ks) };
    let at = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0.0
        } else {
            img[r as usize * w + c as usize]
        }
    };
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(i, &kv)| kv * at(r as isize, (c + i) as isize - pad as isize)).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| {
                    let rr = (r + i) as isize - pad as isize;
                    if rr < 0 || rr >= h as isize {
                        0.0
                    } else {
                        kv * rows[rr as usize * ow + c]
                    }
                })
                .sum();
        }
    }
    (out, oh, ow)
}

/// Structural similarity with the standard 11x11, sigma 1.5 Gaussian window
/// and unit dynamic range, averaged over windows and channels.
pub fn ssim<T: Scalar>(x: &[T], y: &[T], shape: Shape) -> Result<f64> {
    ssim_with(x, y, shape, SsimOptions::default())
}

pub fn ssim_with<T: Scalar>(x: &[T], y: &[T], shape: Shape, opts: SsimOptions) -> Result<f64> {
    if x.len() != shape.len() {
        return Err(Error::ShapeMismatch { expected: shape.len(), got: x.len() });
    }
    if y.len() != shape.len() {
        return Err(Error::ShapeMismatch { expected: shape.len(), got: y.len() });
    }
    let (h, w) = (shape.height, shape.width);
    let win = if opts.same_padding { opts.window } else { opts.window.min(h).min(w) };
    if win == 0 {
        return Err(Error::invalid("ssim window must be non-empty"));
    }
    let k = gaussian_kernel(win, opts.sigma);
    let plane = h * w;
    let mut total = 0.0;
    for ch in 0..shape.channels {
        let a: Vec<f64> = x[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let b: Vec<f64> = y[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
        let (mu_a, oh, ow) = filter(&a, h, w, &k, opts.same_padding);
        let (mu_b, ..) = filter(&b, h, w, &k, opts.same_padding);
        let (s_aa, ..) = filter(&aa, h, w, &k, opts.same_padding);
        let (s_bb, ..) = filter(&bb, h, w, &k, opts.same_padding);
        let (s_ab, ..) = filter(&ab, h, w, &k, opts.same_padding);
        let mut sum = 0.0;
        for i in 0..oh * ow {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = s_aa[i] - ma * ma;
            let vb = s_bb[i] - mb * mb;
            let cov = s_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + opts.c1) * (2.0 * cov + opts.c2)) / ((ma * ma + mb * mb + opts.c1) * (va + vb + opts.c2));
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / shape.channels as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn img(seed: u64) -> Vec<f64> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..28 * 28).map(|_| r.random::<f64>()).collect()
    }

    #[test]
    fn identity_is_one() {
        let s = Shape::image(28, 28);
        for seed in 0..3 {
            let x = img(seed);
            assert!((ssim(&x, &x, s).unwrap() - 1.0).abs() < 1e-12);
            let v = ssim_with(&x, &x, s, SsimOptions { same_padding: false, ..Default::default() }).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_constants() {
        let s = Shape::image(28, 28);
        let zero = vec![0.0; 784];
        let one = vec![1.0; 784];
        assert!(ssim(&zero, &one, s).unwrap().abs() < 0.01);
        let v = ssim_with(&zero, &one, s, SsimOptions { same_padding: false, ..Default::default() }).unwrap();
        assert!(v.abs() < 0.01);
    }

    #[test]
    fn symmetric_and_bounded() {
        let s = Shape::image(28, 28);
        let (a, b) = (img(1), img(2));
        let ab = ssim(&a, &b, s).unwrap();
        assert!((ab - ssim(&b, &a, s).unwrap()).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn shape_mismatch() {
        assert!(ssim(&[0.0; 10], &[0.0; 784], Shape::image(28, 28)).is_err());
    }

    #[test]
    fn valid_window_matches_direct_sum() {
        let s = Shape::image(12, 12);
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..144).map(|_| r.random()).collect();
        let b: Vec<f64> = (0..144).map(|_| r.random()).collect();
        let k = gaussian_kernel(11, 1.5);
        let mut sum = 0.0;
        for r0 in 0..2 {
            for c0 in 0..2 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = k[i] * k[j];
                        let (u, v) = (a[(r0 + i) * 12 + c0 + j], b[(r0 + i) * 12 + c0 + j]);
                        ma += wgt * u;
                        mb += wgt * v;
                        saa += wgt * u * u;
                        sbb += wgt * v * v;
                        sab += wgt * u * v;
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                sum += ((2.0 * ma * mb + c1) * (2.0 * (sab - ma * mb) + c2))
                    / ((ma * ma + mb * mb + c1) * (saa - ma * ma + sbb - mb * mb + c2));
            }
        }
        let opts = SsimOptions { same_padding: false, ..Default::default() };
        assert!((ssim_with(&a, &b, s, opts).unwrap() - sum / 4.0).abs() < 1e-12);
    }
}
