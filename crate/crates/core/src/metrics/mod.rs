//! Evaluation: benign and backdoor accuracy, SSIM, update similarity and
//! penultimate-feature diagnostics.

mod features;
mod ssim;

pub use features::{feature_diagnostic, pca_2d, FeatureDiagnostic, FeatureGroup, FeatureRow, Pca2};
pub use ssim::{ssim, ssim_with, SsimOptions};

use crate::attack::{apply_patch, PatchSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{Network, ParamVector, Shape};
use crate::scalar::Scalar;
use crate::trigger::{AttackTargeting, TriggerGenerator};

/// Anything that turns a clean input into a triggered one.
#[derive(Debug, Clone, Copy)]
pub enum Triggerer<'a, T> {
    Generator(&'a TriggerGenerator<T>),
    Patch(&'a PatchSpec),
}

impl<T: Scalar> Triggerer<'_, T> {
    pub fn apply(&self, x: &[T], shape: Shape) -> Result<Vec<T>> {
        match self {
            Triggerer::Generator(g) => g.apply(x),
            Triggerer::Patch(p) => apply_patch(x, shape, p),
        }
    }
}

/// Top-1 accuracy on `data`.
pub fn benign_accuracy<T: Scalar>(net: &Network<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("accuracy of an empty dataset"));
    }
    let mut correct = 0usize;
    for (x, y) in data.iter() {
        if net.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Fraction of triggered samples classified as the target. With
/// `exclude_target`, samples whose true label already is the target are
/// skipped; NaN if nothing is left to score.
pub fn backdoor_accuracy<T: Scalar>(
    net: &Network<T>,
    data: &Dataset<T>,
    triggerer: &Triggerer<'_, T>,
    targeting: AttackTargeting,
    exclude_target: bool,
) -> Result<f64> {
    let mut hits = 0usize;
    let mut scored = 0usize;
    for (x, y) in data.iter() {
        if exclude_target && y == targeting.target {
            continue;
        }
        scored += 1;
        if net.predict(&triggerer.apply(x, data.shape())?)? == targeting.target {
            hits += 1;
        }
    }
    Ok(if scored == 0 { f64::NAN } else { hits as f64 / scored as f64 })
}

/// Distance and cosine similarity between a malicious update and the mean
/// benign update. `degenerate` is set when either vector has zero norm, in
/// which case `cosine` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateSimilarity {
    pub euclid: f64,
    pub cosine: f64,
    pub degenerate: bool,
}

pub fn update_similarity<T: Scalar>(malicious: &ParamVector<T>, benign: &[ParamVector<T>]) -> Result<UpdateSimilarity> {
    let d = crate::aggregation::validate(benign)?;
    crate::nn::check_dim(d, malicious.dim(), 0)?;
    let mut mean = ParamVector::zeros(d);
    for b in benign {
        mean.axpy(T::one() / T::count(benign.len()), b);
    }
    let euclid = malicious.distance(&mean).as_f64();
    let (nm, nb) = (malicious.norm(), mean.norm());
    if nm == T::zero() || nb == T::zero() {
        return Ok(UpdateSimilarity { euclid, cosine: 0.0, degenerate: true });
    }
    let cosine = (malicious.dot(&mean) / (nm * nb)).as_f64();
    Ok(UpdateSimilarity { euclid, cosine, degenerate: false })
}
