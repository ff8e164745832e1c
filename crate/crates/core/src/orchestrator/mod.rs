//! The federated round loop.
//!
//! Each round the scheduler picks a roster, every agent trains against the
//! same read-only global snapshot (concurrently, on a bounded thread pool),
//! the updates are aggregated in agent-id order and the global model moves
//! by the aggregate. Every random draw is keyed by the experiment seed, the
//! round and the agent, so results do not depend on thread timing.

mod schedule;

pub use schedule::{Roster, Scheduler};

use std::time::Instant;

use rayon::prelude::*;

use crate::aggregation::Aggregator;
use crate::attack::{benign_local_train, fta_local_train, patch_local_train, AgentUpdate, FtaTraining, LocalTraining};
use crate::config::{AttackKind, DatasetConfig, ExperimentConfig};
use crate::data::{dirichlet_partition, gen_synthetic, load_idx, poison_split, Dataset, PartitionPlan, PoisonSplit};
use crate::error::{Error, Result};
use crate::metrics::{backdoor_accuracy, benign_accuracy, feature_diagnostic, update_similarity, FeatureDiagnostic, Triggerer};
use crate::nn::{Network, ParamVector, SgdConfig, Shape};
use crate::rng::{self, tag};
use crate::scalar::Scalar;
use crate::trigger::{AttackTargeting, GeneratorTraining, TriggerGenerator};

/// Environment variable capping the worker threads of a simulation.
pub const THREADS_ENV: &str = "FTA_THREADS";

/// Per-round record.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub roster: Vec<usize>,
    pub attacker: Option<usize>,
    pub benign_acc: f64,
    /// NaN when no attack is configured.
    pub backdoor_acc: f64,
    /// `(agent id, update norm)` in roster order.
    pub update_norms: Vec<(usize, f64)>,
    pub malicious_norm: f64,
    pub mean_benign_norm: f64,
    /// Malicious update vs mean benign update; NaN without an attacker.
    pub cosine_sim: f64,
    pub euclid_dist: f64,
    /// Agent ids whose updates the aggregator used.
    pub accepted: Vec<usize>,
    pub wall_ms: f64,
}

/// Loads or generates the train and test sets described by the config.
pub fn load_data<T: Scalar>(cfg: &ExperimentConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    match &cfg.dataset {
        DatasetConfig::Synthetic(s) => {
            let seed = s.seed.unwrap_or(cfg.fl.seed);
            let all =
                gen_synthetic(s.classes, s.train_samples + s.test_samples, Shape::image(s.height, s.width), s.spread, s.density, seed)?;
            Ok(all.split_at(s.train_samples))
        }
        DatasetConfig::Idx(p) => {
            let limit = |ds: Dataset<T>, n: Option<usize>| match n {
                Some(n) if n < ds.len() => ds.split_at(n).0,
                _ => ds,
            };
            let train = limit(load_idx(&p.train_images, &p.train_labels)?, p.train_limit);
            let test = limit(load_idx(&p.test_images, &p.test_labels)?, p.test_limit);
            if train.shape() != test.shape() {
                return Err(Error::invalid(format!("train images are {}, test images {}", train.shape(), test.shape())));
            }
            let classes = train.classes().max(test.classes());
            Ok((train.with_classes(classes)?, test.with_classes(classes)?))
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| Error::invalid(format!("cannot start worker threads: {e}")))
}

/// A running experiment.
pub struct Simulation<T> {
    cfg: ExperimentConfig,
    train: Dataset<T>,
    test: Dataset<T>,
    plan: PartitionPlan,
    splits: Vec<Option<PoisonSplit>>,
    generator_pool: Dataset<T>,
    global: Network<T>,
    generator: Option<TriggerGenerator<T>>,
    aggregator: Aggregator<T>,
    scheduler: Scheduler,
    targeting: AttackTargeting,
    round: usize,
    last_ba: f64,
    pool: rayon::ThreadPool,
}

impl<T: Scalar> Simulation<T> {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let (train, test) = load_data(cfg)?;
        Self::with_data(cfg, train, test)
    }

    pub fn with_data(cfg: &ExperimentConfig, train: Dataset<T>, test: Dataset<T>) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_against(train.shape(), train.classes())?;
        let seed = cfg.fl.seed;
        let plan = dirichlet_partition(&train, cfg.fl.total_agents, cfg.fl.dirichlet_alpha, rng::derive(seed, &[tag::PARTITION]))?;
        let targeting = AttackTargeting::new(cfg.attack.target_label, train.classes())?;
        let mut splits = vec![None; cfg.fl.total_agents];
        let mut pooled = Vec::new();
        for id in 0..cfg.fl.total_agents {
            if cfg.is_malicious(id) {
                let split = poison_split(&plan.assignments[id], cfg.attack.poison_fraction, rng::derive(seed, &[tag::POISON, id as u64]))?;
                pooled.extend_from_slice(&plan.assignments[id]);
                splits[id] = Some(split);
            }
        }
        pooled.sort_unstable();
        let cap = cfg.attack.generator.dataset_size;
        if pooled.len() > cap {
            let mut r = rng::stream(seed, &[tag::GENERATOR_POOL]);
            let mut keep: Vec<usize> = rand::seq::index::sample(&mut r, pooled.len(), cap).into_iter().map(|i| pooled[i]).collect();
            keep.sort_unstable();
            pooled = keep;
        }
        let generator_pool = train.subset(&pooled);
        let specs = cfg.model.specs(train.classes());
        let global = Network::new(train.shape(), &specs, &mut rng::stream(seed, &[tag::MODEL_INIT]))?;
        let generator = if cfg.attack.kind == AttackKind::Fta {
            let g = &cfg.attack.generator;
            let mut r = rng::stream(seed, &[tag::GENERATOR_INIT]);
            Some(TriggerGenerator::new(train.shape(), g.hidden, cfg.attack.trigger_size, g.output_scale, &mut r)?)
        } else {
            None
        };
        let aggregator = Aggregator::new(cfg.aggregator.clone(), T::lit(cfg.fl.server_lr), rng::derive(seed, &[tag::AGGREGATOR]));
        Ok(Simulation {
            cfg: cfg.clone(),
            train,
            test,
            plan,
            splits,
            generator_pool,
            global,
            generator,
            aggregator,
            scheduler: Scheduler::new(cfg),
            targeting,
            round: 0,
            last_ba: f64::NAN,
            pool: thread_pool()?,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn global(&self) -> &Network<T> {
        &self.global
    }

    pub fn generator(&self) -> Option<&TriggerGenerator<T>> {
        self.generator.as_ref()
    }

    pub fn train_set(&self) -> &Dataset<T> {
        &self.train
    }

    pub fn test_set(&self) -> &Dataset<T> {
        &self.test
    }

    pub fn partition(&self) -> &PartitionPlan {
        &self.plan
    }

    pub fn targeting(&self) -> AttackTargeting {
        self.targeting
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    /// The configured trigger, if the experiment has an attack.
    pub fn triggerer(&self) -> Option<Triggerer<'_, T>> {
        match self.cfg.attack.kind {
            AttackKind::None => None,
            AttackKind::Fta => self.generator.as_ref().map(Triggerer::Generator),
            AttackKind::Patch => Some(Triggerer::Patch(&self.cfg.attack.patch)),
        }
    }

    fn benign_training(&self) -> LocalTraining {
        let l = &self.cfg.attack.local;
        LocalTraining {
            epochs: l.benign_epochs,
            batch_size: l.batch_size,
            sgd: SgdConfig { lr: l.benign_lr, momentum: l.momentum, weight_decay: l.weight_decay },
        }
    }

    fn fta_training(&self) -> FtaTraining {
        let l = &self.cfg.attack.local;
        let g = &self.cfg.attack.generator;
        FtaTraining {
            generator: GeneratorTraining {
                epochs: g.epochs,
                batch_size: g.batch_size,
                sgd: SgdConfig { lr: g.lr, momentum: g.momentum, weight_decay: 0.0 },
            },
            poisoning: LocalTraining {
                epochs: l.backdoor_epochs,
                batch_size: l.batch_size,
                sgd: SgdConfig { lr: l.backdoor_lr, momentum: l.momentum, weight_decay: l.weight_decay },
            },
        }
    }

    fn train_agent(&self, id: usize, malicious: bool, seed: u64) -> Result<(AgentUpdate<T>, Option<TriggerGenerator<T>>)> {
        let benign = self.benign_training();
        if !malicious {
            let u = benign_local_train(id, &self.global, &self.train, &self.plan.assignments[id], &benign, seed)?;
            return Ok((u, None));
        }
        let split = self.splits[id].as_ref().ok_or_else(|| Error::invalid(format!("agent {id} is not malicious")))?;
        match self.cfg.attack.kind {
            AttackKind::Fta => {
                let gen = self.generator.as_ref().ok_or_else(|| Error::invalid("flexible-trigger attack without a generator"))?;
                let (u, g) = fta_local_train(
                    id,
                    &self.global,
                    gen,
                    &self.generator_pool,
                    &self.train,
                    split,
                    self.targeting,
                    &self.fta_training(),
                    seed,
                )?;
                Ok((u, Some(g)))
            }
            AttackKind::Patch => {
                let hp = self.fta_training().poisoning;
                let u = patch_local_train(id, &self.global, &self.train, split, &self.cfg.attack.patch, self.targeting, &hp, seed)?;
                Ok((u, None))
            }
            AttackKind::None => Err(Error::invalid("malicious agent without an attack")),
        }
    }

    /// Backdoor accuracy of the current global model on the test set.
    pub fn backdoor_accuracy(&self) -> Result<f64> {
        match self.triggerer() {
            Some(t) => backdoor_accuracy(&self.global, &self.test, &t, self.targeting, self.cfg.attack.exclude_target_in_ba),
            None => Ok(f64::NAN),
        }
    }

    /// Runs one round.
    pub fn step(&mut self) -> Result<RoundReport> {
        let round = self.round + 1;
        self.run_round(round).map_err(|e| e.in_round(round))
    }

    fn run_round(&mut self, round: usize) -> Result<RoundReport> {
        let start = Instant::now();
        let roster = self.scheduler.roster(round, self.last_ba);
        let seed = self.cfg.fl.seed;
        let jobs: Vec<(usize, bool)> = roster.ids.iter().map(|&id| (id, roster.attacker == Some(id))).collect();
        let this = &*self;
        let results: Vec<Result<(AgentUpdate<T>, Option<TriggerGenerator<T>>)>> = this.pool.install(|| {
            jobs.par_iter().map(|&(id, mal)| this.train_agent(id, mal, rng::derive(seed, &[tag::AGENT, round as u64, id as u64]))).collect()
        });
        let mut updates = Vec::with_capacity(results.len());
        let mut new_generator = None;
        for r in results {
            let (u, g) = r?;
            if g.is_some() {
                new_generator = g;
            }
            updates.push(u);
        }
        let deltas: Vec<_> = updates.iter().map(|u| u.delta.clone()).collect();
        let outcome = self.aggregator.aggregate(&deltas)?;
        let mut params = self.global.params().clone();
        params.axpy(T::one(), &outcome.global_delta);
        if !params.is_finite() {
            return Err(Error::NumericFailure("global model became non-finite".into()));
        }
        self.global.set_params(params)?;
        if let Some(g) = new_generator {
            self.generator = Some(g);
        }

        let benign_acc = benign_accuracy(&self.global, &self.test)?;
        let backdoor_acc = self.backdoor_accuracy()?;
        self.last_ba = backdoor_acc;
        self.round = round;

        let update_norms: Vec<(usize, f64)> = updates.iter().map(|u| (u.agent_id, u.delta.norm().as_f64())).collect();
        let benign: Vec<_> = updates.iter().filter(|u| !u.is_malicious).map(|u| u.delta.clone()).collect();
        let mean_benign_norm =
            if benign.is_empty() { f64::NAN } else { benign.iter().map(|b| b.norm().as_f64()).sum::<f64>() / benign.len() as f64 };
        let (mut malicious_norm, mut cosine_sim, mut euclid_dist) = (f64::NAN, f64::NAN, f64::NAN);
        if let Some(m) = updates.iter().find(|u| u.is_malicious) {
            malicious_norm = m.delta.norm().as_f64();
            if !benign.is_empty() {
                let s = update_similarity(&m.delta, &benign)?;
                cosine_sim = s.cosine;
                euclid_dist = s.euclid;
            }
        }
        Ok(RoundReport {
            round,
            roster: roster.ids.clone(),
            attacker: roster.attacker,
            benign_acc,
            backdoor_acc,
            update_norms,
            malicious_norm,
            mean_benign_norm,
            cosine_sim,
            euclid_dist,
            accepted: outcome.accepted.iter().map(|&i| roster.ids[i]).collect(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs the remaining configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundReport>> {
        let mut out = Vec::with_capacity(self.cfg.fl.rounds.saturating_sub(self.round));
        while self.round < self.cfg.fl.rounds {
            out.push(self.step()?);
        }
        Ok(out)
    }

    /// Replaces the global model and, for flexible-trigger runs, the
    /// generator parameters, e.g. with checkpointed values.
    pub fn restore(&mut self, global: ParamVector<T>, generator: Option<ParamVector<T>>) -> Result<()> {
        if global.dim() != self.global.num_params() {
            return Err(Error::ShapeMismatch { expected: self.global.num_params(), got: global.dim() });
        }
        match (self.generator.as_mut(), generator) {
            (Some(g), Some(p)) => {
                if p.dim() != g.params().dim() {
                    return Err(Error::ShapeMismatch { expected: g.params().dim(), got: p.dim() });
                }
                g.set_params(p)?;
            }
            (None, Some(_)) => return Err(Error::invalid("generator parameters given for a run without a generator")),
            _ => {}
        }
        self.global.set_params(global)
    }

    /// Penultimate-feature diagnostic on the first `panel` test samples;
    /// `None` without an attack.
    pub fn feature_diagnostic(&self, panel: usize) -> Result<Option<FeatureDiagnostic<T>>> {
        let Some(t) = self.triggerer() else { return Ok(None) };
        let n = panel.min(self.test.len());
        let idx: Vec<usize> = (0..n).collect();
        feature_diagnostic(&self.global, &self.test.subset(&idx), &t, self.targeting).map(Some)
    }
}

/// Result of [`run_experiment`].
pub struct ExperimentOutput<T> {
    pub reports: Vec<RoundReport>,
    pub simulation: Simulation<T>,
}

/// Builds the simulation from the config and runs every round.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentOutput<T>> {
    let mut simulation = Simulation::new(cfg)?;
    let reports = simulation.run()?;
    Ok(ExperimentOutput { reports, simulation })
}
