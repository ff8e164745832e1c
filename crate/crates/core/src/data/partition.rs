use rand::seq::index;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::scalar::Scalar;

const MAX_REDRAWS: u64 = 1000;

/// Assignment of training-sample indices to agents.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub alpha: f64,
}

impl PartitionPlan {
    pub fn n_agents(&self) -> usize {
        self.assignments.len()
    }

    /// `hist[agent][class]` sample counts.
    pub fn class_histogram<T: Scalar>(&self, ds: &Dataset<T>) -> Vec<Vec<usize>> {
        self.assignments
            .iter()
            .map(|idx| {
                let mut h = vec![0; ds.classes()];
                for &i in idx {
                    h[ds.label(i)] += 1;
                }
                h
            })
            .collect()
    }
}

/// Per-class Dirichlet split: for every class draw `p ~ Dir(alpha * 1)` over
/// the agents and send each sample of that class to an agent drawn from `p`.
///
/// A draw that leaves some agent empty is repeated with `seed + 1`.
pub fn dirichlet_partition<T: Scalar>(ds: &Dataset<T>, n_agents: usize, alpha: f64, seed: u64) -> Result<PartitionPlan> {
    if n_agents == 0 {
        return Err(Error::invalid("need at least one agent"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    if n_agents > ds.len() {
        return Err(Error::invalid(format!("{n_agents} agents but only {} samples", ds.len())));
    }
    let mut by_class = vec![Vec::new(); ds.classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    for attempt in 0..MAX_REDRAWS {
        let mut r = rng::stream(seed.wrapping_add(attempt), &[tag::PARTITION]);
        let mut assignments = vec![Vec::new(); n_agents];
        for members in by_class.iter().filter(|m| !m.is_empty()) {
            let mut p: Vec<f64> = (0..n_agents).map(|_| gamma.sample(&mut r)).collect();
            if !(p.iter().sum::<f64>() > 0.0) {
                // every gamma draw underflowed; treat as uniform
                p.iter_mut().for_each(|v| *v = 1.0);
            }
            let pick = WeightedIndex::new(&p).map_err(|e| Error::invalid(e.to_string()))?;
            for &i in members {
                assignments[pick.sample(&mut r)].push(i);
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(PartitionPlan { assignments, alpha });
        }
        log::debug!("dirichlet draw {attempt} left an agent empty; redrawing");
    }
    Err(Error::invalid(format!("no partition without empty agents after {MAX_REDRAWS} draws")))
}

/// Clean/backdoor split of one agent's local data. The clean stream is the
/// whole local set (backdoor samples keep their true labels there).
#[derive(Debug, Clone, PartialEq)]
pub struct PoisonSplit {
    pub clean_indices: Vec<usize>,
    pub bd_indices: Vec<usize>,
    pub fraction: f64,
}

/// Samples `floor(fraction * |local|)` indices without replacement.
pub fn poison_split(local_indices: &[usize], fraction: f64, seed: u64) -> Result<PoisonSplit> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("poison fraction must be in [0, 1], got {fraction}")));
    }
    let n = local_indices.len();
    let k = ((fraction * n as f64).floor() as usize).min(n);
    let mut r = rng::stream(seed, &[tag::POISON]);
    let mut picked: Vec<usize> = index::sample(&mut r, n, k).into_iter().map(|j| local_indices[j]).collect();
    picked.sort_unstable();
    Ok(PoisonSplit { clean_indices: local_indices.to_vec(), bd_indices: picked, fraction })
}
