//! Server-side aggregation rules.
//!
//! Every rule is a pure function of the submitted updates, which the caller
//! orders by agent id; positional tie-breaks therefore favour the lowest id.
//! [`Aggregator`] dispatches on a configured [`Rule`] and carries the little
//! state some rules need between rounds.

mod basic;
mod coordinate;
mod flame;
mod krum;
mod rfa;
mod sparsefed;

use serde::{Deserialize, Serialize};

pub use basic::{adaptive_clip_bound, clip_factor, fedavg, norm_clip};
pub use coordinate::{coordinate_median, sign_aggregate, trimmed_mean};
pub use flame::{cosine_distance, flame, majority_cluster};
pub use krum::{krum_select, multi_krum};
pub use rfa::{rfa_geometric_median, weiszfeld_objective, GeometricMedian};
pub use sparsefed::{sparsefed, sparsefed_with_residual, top_k};

use crate::error::{Error, Result};
use crate::nn::{check_dim, ParamVector};
use crate::rng;
use crate::scalar::Scalar;

/// Per-update diagnostics recorded by the rule that produced an outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation<T> {
    pub clip_factor: Option<T>,
    pub krum_score: Option<T>,
    pub cluster: Option<usize>,
}

impl<T> Default for Annotation<T> {
    fn default() -> Self {
        Annotation { clip_factor: None, krum_score: None, cluster: None }
    }
}

/// Result of one aggregation. `accepted` and `annotations` are indexed by
/// submission position.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationOutcome<T> {
    pub global_delta: ParamVector<T>,
    pub accepted: Vec<usize>,
    pub annotations: Vec<Annotation<T>>,
}

impl<T> AggregationOutcome<T> {
    pub fn accept_all(global_delta: ParamVector<T>, n: usize) -> Self {
        AggregationOutcome { global_delta, accepted: (0..n).collect(), annotations: (0..n).map(|_| Annotation::default()).collect() }
    }
}

/// Checks for at least one update and equal dimensions; returns the dimension.
pub fn validate<T: Scalar>(updates: &[ParamVector<T>]) -> Result<usize> {
    let first = updates.first().ok_or_else(|| Error::invalid("no updates to aggregate"))?;
    let d = first.dim();
    for (i, u) in updates.iter().enumerate().skip(1) {
        check_dim(d, u.dim(), i)?;
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    Fedavg,
    NormClip,
    AdaptiveClip,
    Krum,
    MultiKrum,
    TrimmedMean,
    Median,
    SignSgd,
    Rfa,
    Flame,
    Sparsefed,
}

impl Rule {
    pub const ALL: [Rule; 11] = [
        Rule::Fedavg,
        Rule::NormClip,
        Rule::AdaptiveClip,
        Rule::Krum,
        Rule::MultiKrum,
        Rule::TrimmedMean,
        Rule::Median,
        Rule::SignSgd,
        Rule::Rfa,
        Rule::Flame,
        Rule::Sparsefed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Fedavg => "fedavg",
            Rule::NormClip => "norm-clip",
            Rule::AdaptiveClip => "adaptive-clip",
            Rule::Krum => "krum",
            Rule::MultiKrum => "multi-krum",
            Rule::TrimmedMean => "trimmed-mean",
            Rule::Median => "median",
            Rule::SignSgd => "sign-sgd",
            Rule::Rfa => "rfa",
            Rule::Flame => "flame",
            Rule::Sparsefed => "sparsefed",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL.into_iter().find(|r| r.name() == s).ok_or_else(|| Error::invalid(format!("unknown aggregation rule '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    pub rule: Rule,
    /// Fixed clip bound for `norm-clip` and `sparsefed`.
    pub clip_bound: f64,
    pub krum_f: usize,
    /// Multi-Krum selection size; `n - f - 1` when absent.
    pub multi_krum_c: Option<usize>,
    pub trim_m: usize,
    pub sign_lr: f64,
    pub rfa_max_iters: usize,
    pub rfa_tol: f64,
    pub rfa_nu: f64,
    pub flame_noise: f64,
    /// SparseFed top-k; a tenth of the model dimension when absent.
    pub sparsefed_k: Option<usize>,
    pub error_feedback: bool,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        AggregatorConfig {
            rule: Rule::Fedavg,
            clip_bound: 1.0,
            krum_f: 1,
            multi_krum_c: None,
            trim_m: 2,
            sign_lr: 1e-3,
            rfa_max_iters: 100,
            rfa_tol: 1e-8,
            rfa_nu: 1e-6,
            flame_noise: 1e-3,
            sparsefed_k: None,
            error_feedback: false,
        }
    }
}

impl AggregatorConfig {
    pub fn with_rule(rule: Rule) -> Self {
        AggregatorConfig { rule, ..Self::default() }
    }

    /// Range checks that do not depend on the round size. `n` is the number
    /// of updates per round, used for the size-dependent constraints.
    pub fn validate(&self, n: usize) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("aggregator.{key}"), format!("must be positive, got {v}")))
            }
        };
        positive("clip_bound", self.clip_bound)?;
        positive("sign_lr", self.sign_lr)?;
        positive("rfa_tol", self.rfa_tol)?;
        positive("rfa_nu", self.rfa_nu)?;
        if self.rfa_max_iters == 0 {
            return Err(Error::config("aggregator.rfa_max_iters", "must be at least 1"));
        }
        if !(self.flame_noise >= 0.0 && self.flame_noise.is_finite()) {
            return Err(Error::config("aggregator.flame_noise", format!("must be non-negative, got {}", self.flame_noise)));
        }
        if self.sparsefed_k == Some(0) {
            return Err(Error::config("aggregator.sparsefed_k", "must be at least 1"));
        }
        match self.rule {
            Rule::TrimmedMean if n <= 2 * self.trim_m => {
                Err(Error::config("aggregator.trim_m", format!("needs more than {} updates per round, got {n}", 2 * self.trim_m)))
            }
            Rule::Krum | Rule::MultiKrum if n < self.krum_f + 3 => Err(Error::config(
                "aggregator.krum_f",
                format!("krum with f = {} needs at least {} updates per round, got {n}", self.krum_f, self.krum_f + 3),
            )),
            Rule::MultiKrum => match self.multi_krum_c {
                Some(c) if c == 0 || (c != n && c + self.krum_f + 1 > n) => {
                    Err(Error::config("aggregator.multi_krum_c", format!("must be n or at most n - f - 1 = {}", n - self.krum_f - 1)))
                }
                _ => Ok(()),
            },
            Rule::Flame if n < 3 => Err(Error::config("aggregator.rule", "flame needs at least 3 updates per round")),
            _ => Ok(()),
        }
    }
}

/// Configured rule plus cross-round state (SparseFed residual, FLAME noise
/// counter).
#[derive(Debug, Clone)]
pub struct Aggregator<T> {
    config: AggregatorConfig,
    gamma: T,
    seed: u64,
    calls: u64,
    residual: Option<ParamVector<T>>,
}

impl<T: Scalar> Aggregator<T> {
    /// `gamma` is the server learning rate; `seed` keys the FLAME noise.
    pub fn new(config: AggregatorConfig, gamma: T, seed: u64) -> Self {
        Aggregator { config, gamma, seed, calls: 0, residual: None }
    }

    pub fn config(&self) -> &AggregatorConfig {
        &self.config
    }

    pub fn aggregate(&mut self, updates: &[ParamVector<T>]) -> Result<AggregationOutcome<T>> {
        let d = validate(updates)?;
        let n = updates.len();
        let c = &self.config;
        let gamma = self.gamma;
        self.calls += 1;
        let scaled = |delta: ParamVector<T>| AggregationOutcome::accept_all(delta.scaled(gamma), n);
        match c.rule {
            Rule::Fedavg => fedavg(updates, gamma),
            Rule::NormClip => basic::clipped_fedavg(updates, T::lit(c.clip_bound), gamma),
            Rule::AdaptiveClip => basic::clipped_fedavg(updates, adaptive_clip_bound(updates)?, gamma),
            Rule::Krum => {
                let pick = krum_select(updates, c.krum_f)?;
                Ok(AggregationOutcome {
                    global_delta: updates[pick].scaled(gamma),
                    accepted: vec![pick],
                    annotations: (0..n).map(|_| Annotation::default()).collect(),
                })
            }
            Rule::MultiKrum => {
                let sel = c.multi_krum_c.unwrap_or(n.saturating_sub(c.krum_f + 1).max(1));
                multi_krum(updates, c.krum_f, sel, gamma)
            }
            Rule::TrimmedMean => Ok(scaled(trimmed_mean(updates, c.trim_m)?)),
            Rule::Median => Ok(scaled(coordinate_median(updates)?)),
            Rule::SignSgd => Ok(AggregationOutcome::accept_all(sign_aggregate(updates, T::lit(c.sign_lr))?, n)),
            Rule::Rfa => {
                let gm = rfa_geometric_median(updates, c.rfa_max_iters, T::lit(c.rfa_tol), T::lit(c.rfa_nu))?;
                Ok(scaled(gm.point))
            }
            Rule::Flame => {
                let mut out = flame(updates, T::lit(c.flame_noise), rng::derive(self.seed, &[self.calls]))?;
                out.global_delta.scale(gamma);
                Ok(out)
            }
            Rule::Sparsefed => {
                let k = c.sparsefed_k.unwrap_or((d / 10).max(1)).min(d);
                let residual = if c.error_feedback { Some(self.residual.get_or_insert_with(|| ParamVector::zeros(d))) } else { None };
                sparsefed_with_residual(updates, T::lit(c.clip_bound), k, gamma, residual)
            }
        }
    }
}
