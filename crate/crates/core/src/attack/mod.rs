//! Agent behaviours: benign local training, the flexible-trigger malicious
//! agent and the fixed-patch baseline.
//!
//! Every agent trains a private copy of the global snapshot and reports only
//! `delta = local - global`.

mod patch;

pub use patch::{apply_patch, PatchSpec};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PoisonSplit};
use crate::error::{Error, Result};
use crate::nn::{Network, ParamVector, Sgd, SgdConfig};
use crate::rng::{self, tag, SimRng};
use crate::scalar::Scalar;
use crate::trigger::{train_generator, AttackTargeting, GeneratorTraining, TriggerGenerator};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentUpdate<T> {
    pub agent_id: usize,
    pub delta: ParamVector<T>,
    /// Ground truth for diagnostics; aggregators never see it.
    pub is_malicious: bool,
}

/// Local SGD schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub sgd: SgdConfig,
}

/// Hyperparameters of the flexible-trigger agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtaTraining {
    /// Stage I (trigger generator, classifier frozen).
    pub generator: GeneratorTraining,
    /// Stage II (malicious classifier, generator frozen).
    pub poisoning: LocalTraining,
}

/// Trains `global` on the clean stream, adding one poisoned minibatch per
/// step when `poisoned` is non-empty. Clean-batch order depends only on
/// `seed`, so with no poisoned samples this is exactly benign training.
fn train_local<T: Scalar>(
    global: &Network<T>,
    data: &Dataset<T>,
    clean: &[usize],
    poisoned: &[Vec<T>],
    target: usize,
    cfg: &LocalTraining,
    seed: u64,
) -> Result<Network<T>> {
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut net = global.clone();
    let mut opt = Sgd::new(cfg.sgd);
    let mut batch_rng = rng::stream(seed, &[tag::AGENT]);
    let mut poison_rng = rng::stream(seed, &[tag::STAGE_POISON]);
    let mut order = clean.to_vec();
    let mut bd_order: Vec<usize> = (0..poisoned.len()).collect();
    let mut bd_cursor = bd_order.len();
    let bd_labels = vec![target; cfg.batch_size];
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut batch_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[T]> = chunk.iter().map(|&i| data.sample(i)).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| data.label(i)).collect();
            let (_, mut grad) = net.loss_and_grad(&xs, &ys).map_err(|e| e.in_epoch(epoch))?;
            if !poisoned.is_empty() {
                let picked = next_poison_batch(&mut bd_order, &mut bd_cursor, cfg.batch_size, &mut poison_rng);
                let xs: Vec<&[T]> = picked.iter().map(|&j| poisoned[j].as_slice()).collect();
                let (_, g_bd) = net.loss_and_grad(&xs, &bd_labels[..xs.len()]).map_err(|e| e.in_epoch(epoch))?;
                grad.axpy(T::one(), &g_bd);
            }
            opt.step_network(&mut net, &grad);
        }
    }
    Ok(net)
}

/// Next `size` indices from a reshuffled-on-exhaustion cycle over the
/// poisoned set.
fn next_poison_batch(order: &mut [usize], cursor: &mut usize, size: usize, rng: &mut SimRng) -> Vec<usize> {
    let size = size.min(order.len());
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        if *cursor >= order.len() {
            order.shuffle(rng);
            *cursor = 0;
        }
        out.push(order[*cursor]);
        *cursor += 1;
    }
    out
}

fn delta<T: Scalar>(agent_id: usize, trained: &Network<T>, global: &Network<T>, is_malicious: bool) -> Result<AgentUpdate<T>> {
    Ok(AgentUpdate { agent_id, delta: trained.params().sub(global.params())?, is_malicious })
}

/// Benign agent: SGD on its local data, returns `theta* - theta`.
pub fn benign_local_train<T: Scalar>(
    agent_id: usize,
    global: &Network<T>,
    data: &Dataset<T>,
    indices: &[usize],
    cfg: &LocalTraining,
    seed: u64,
) -> Result<AgentUpdate<T>> {
    if indices.is_empty() {
        return Err(Error::invalid(format!("agent {agent_id} has no local data")));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("local training needs at least one epoch"));
    }
    let trained = train_local(global, data, indices, &[], 0, cfg, seed)?;
    delta(agent_id, &trained, global, false)
}

/// Flexible-trigger agent.
///
/// Stage I continues training `gen` against the frozen global model on
/// `generator_data`. Stage II trains the classifier on
/// `L(f(x), y) + L(f(T(x_m)), target)` with one clean and one poisoned
/// minibatch per step, where the poisoned stream is `split.bd_indices`
/// passed through the Stage-I generator. Returns the update and the
/// generator to keep for later rounds.
#[allow(clippy::too_many_arguments)]
pub fn fta_local_train<T: Scalar>(
    agent_id: usize,
    global: &Network<T>,
    gen: &TriggerGenerator<T>,
    generator_data: &Dataset<T>,
    data: &Dataset<T>,
    split: &PoisonSplit,
    targeting: AttackTargeting,
    hp: &FtaTraining,
    seed: u64,
) -> Result<(AgentUpdate<T>, TriggerGenerator<T>)> {
    if gen.shape() != global.input_shape() {
        return Err(Error::invalid("generator and classifier input shapes differ"));
    }
    if split.clean_indices.is_empty() {
        return Err(Error::invalid(format!("agent {agent_id} has no local data")));
    }
    let mut stage_rng = rng::stream(seed, &[tag::STAGE_TRIGGER]);
    let gen = train_generator(gen, global, generator_data, targeting, &hp.generator, &mut stage_rng)
        .map_err(|e| e.in_stage("stage I (trigger generator)"))?;
    let poisoned = split
        .bd_indices
        .iter()
        .map(|&i| gen.apply(data.sample(i)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("stage II (poisoning)"))?;
    let trained = train_local(global, data, &split.clean_indices, &poisoned, targeting.target, &hp.poisoning, seed)
        .map_err(|e| e.in_stage("stage II (poisoning)"))?;
    Ok((delta(agent_id, &trained, global, true)?, gen))
}

/// Baseline agent: like Stage II of the flexible-trigger agent, with a fixed
/// patch stamped on the poisoned samples.
#[allow(clippy::too_many_arguments)]
pub fn patch_local_train<T: Scalar>(
    agent_id: usize,
    global: &Network<T>,
    data: &Dataset<T>,
    split: &PoisonSplit,
    patch: &PatchSpec,
    targeting: AttackTargeting,
    cfg: &LocalTraining,
    seed: u64,
) -> Result<AgentUpdate<T>> {
    if split.clean_indices.is_empty() {
        return Err(Error::invalid(format!("agent {agent_id} has no local data")));
    }
    let shape = data.shape();
    let poisoned = split.bd_indices.iter().map(|&i| apply_patch(data.sample(i), shape, patch)).collect::<Result<Vec<_>>>()?;
    let trained = train_local(global, data, &split.clean_indices, &poisoned, targeting.target, cfg, seed)?;
    delta(agent_id, &trained, global, true)
}
