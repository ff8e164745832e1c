use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Shape;
use crate::scalar::Scalar;

/// Solid square stamped into every channel of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
    pub value: f64,
}

impl Default for PatchSpec {
    /// 3x3 white square in the top-left corner.
    fn default() -> Self {
        PatchSpec { row: 0, col: 0, height: 3, width: 3, value: 1.0 }
    }
}

impl PatchSpec {
    pub fn validate(&self, shape: Shape) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("patch must cover at least one pixel"));
        }
        if self.row + self.height > shape.height || self.col + self.width > shape.width {
            return Err(Error::invalid(format!(
                "patch {}x{} at ({}, {}) does not fit a {}x{} image",
                self.height, self.width, self.row, self.col, shape.height, shape.width
            )));
        }
        if !(0.0..=1.0).contains(&self.value) {
            return Err(Error::invalid(format!("patch value {} outside [0, 1]", self.value)));
        }
        Ok(())
    }
}

/// Copy of `x` with the patch region set to the patch value.
pub fn apply_patch<T: Scalar>(x: &[T], shape: Shape, patch: &PatchSpec) -> Result<Vec<T>> {
    if x.len() != shape.len() {
        return Err(Error::ShapeMismatch { expected: shape.len(), got: x.len() });
    }
    patch.validate(shape)?;
    let mut out = x.to_vec();
    let v = T::lit(patch.value);
    let plane = shape.height * shape.width;
    for c in 0..shape.channels {
        for r in patch.row..patch.row + patch.height {
            let start = c * plane + r * shape.width + patch.col;
            out[start..start + patch.width].iter_mut().for_each(|p| *p = v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_patch_on_zero_image() {
        let shape = Shape::image(6, 5);
        let out = apply_patch(&vec![0.0_f64; 30], shape, &PatchSpec::default()).unwrap();
        assert_eq!(out.iter().sum::<f64>(), 9.0);
        assert_eq!(out.iter().filter(|&&v| v == 1.0).count(), 9);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[2 * 5 + 2], 1.0);
        assert_eq!(out[3 * 5], 0.0);
        assert_eq!(out[3], 0.0);
    }

    #[test]
    fn patch_matching_region_is_noop() {
        let shape = Shape::image(4, 4);
        let mut x: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
        let p = PatchSpec { row: 1, col: 1, height: 2, width: 2, value: 0.5 };
        for r in 1..3 {
            for c in 1..3 {
                x[r * 4 + c] = 0.5;
            }
        }
        assert_eq!(apply_patch(&x, shape, &p).unwrap(), x);
    }

    #[test]
    fn idempotent() {
        let shape = Shape::new(2, 5, 5);
        let x: Vec<f64> = (0..50).map(|i| (i % 7) as f64 / 7.0).collect();
        let p = PatchSpec { row: 2, col: 1, height: 3, width: 2, value: 0.8 };
        let once = apply_patch(&x, shape, &p).unwrap();
        assert_eq!(apply_patch(&once, shape, &p).unwrap(), once);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let shape = Shape::image(4, 4);
        let p = PatchSpec { row: 2, col: 0, height: 3, width: 1, value: 1.0 };
        assert!(apply_patch(&[0.0_f64; 16], shape, &p).is_err());
    }
}
