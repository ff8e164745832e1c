use rand::seq::index;

use crate::config::{AttackConfig, AttackKind, AttackMode, ExperimentConfig};
use crate::rng::{self, tag};

/// Agents selected for one round. `ids` is sorted; `attacker` is the
/// malicious participant, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    pub ids: Vec<usize>,
    pub attacker: Option<usize>,
}

/// Round-by-round participant selection.
#[derive(Debug, Clone)]
pub struct Scheduler {
    attack: Option<AttackConfig>,
    malicious: Vec<usize>,
    benign: Vec<usize>,
    per_round: usize,
    seed: u64,
    attacks_done: usize,
    stopped: bool,
}

impl Scheduler {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let attack = (cfg.attack.kind != AttackKind::None).then(|| cfg.attack.clone());
        let mut malicious = attack.as_ref().map(|a| a.malicious_ids.clone()).unwrap_or_default();
        malicious.sort_unstable();
        Scheduler {
            attack,
            malicious,
            benign: cfg.benign_ids(),
            per_round: cfg.fl.agents_per_round,
            seed: cfg.fl.seed,
            attacks_done: 0,
            stopped: false,
        }
    }

    /// Number of rounds the attacker has joined so far.
    pub fn attacks_done(&self) -> usize {
        self.attacks_done
    }

    fn attacks_in(&self, round: usize) -> bool {
        let Some(a) = &self.attack else { return false };
        if self.malicious.is_empty() || round < a.start_round || !(round - a.start_round).is_multiple_of(a.frequency) {
            return false;
        }
        match a.mode {
            AttackMode::FixedFrequency => true,
            AttackMode::FewShot => !self.stopped && self.attacks_done < a.attack_num,
        }
    }

    /// Roster of `round` (1-based). `last_ba` is the backdoor accuracy after
    /// the previous round; in few-shot mode reaching the stop threshold ends
    /// the attack for good.
    pub fn roster(&mut self, round: usize, last_ba: f64) -> Roster {
        if let Some(a) = &self.attack {
            if a.mode == AttackMode::FewShot && last_ba >= a.ba_stop_threshold {
                self.stopped = true;
            }
        }
        let mut r = rng::stream(self.seed, &[tag::SCHEDULE, round as u64]);
        let attacker = if self.attacks_in(round) {
            let id = self.malicious[self.attacks_done % self.malicious.len()];
            self.attacks_done += 1;
            Some(id)
        } else {
            None
        };
        let n_benign = if attacker.is_some() { self.per_round - 1 } else { self.per_round };
        let mut ids: Vec<usize> = index::sample(&mut r, self.benign.len(), n_benign).into_iter().map(|i| self.benign[i]).collect();
        ids.extend(attacker);
        ids.sort_unstable();
        Roster { ids, attacker }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!("[dataset]\nkind = \"synthetic\"\n[fl]\nrounds = 50\n{extra}")).unwrap()
    }

    #[test]
    fn fixed_frequency_every_round() {
        let c = cfg("[attack]\ntype = \"fta\"\nmalicious_ids = [0, 1]\n");
        let mut s = Scheduler::new(&c);
        for round in 1..=20 {
            let r = s.roster(round, 0.0);
            assert_eq!(r.ids.len(), 10);
            assert_eq!(r.ids.iter().filter(|&&i| i < 2).count(), 1);
            assert_eq!(r.attacker, Some((round - 1) % 2));
            let mut d = r.ids.clone();
            d.dedup();
            assert_eq!(d.len(), 10);
        }
    }

    #[test]
    fn frequency_and_start() {
        let c = cfg("[attack]\ntype = \"patch\"\nfrequency = 3\nstart_round = 5\n");
        let mut s = Scheduler::new(&c);
        let attacked: Vec<usize> = (1..=15).filter(|&r| s.roster(r, 0.0).attacker.is_some()).collect();
        assert_eq!(attacked, vec![5, 8, 11, 14]);
    }

    #[test]
    fn few_shot_zero_budget() {
        let c = cfg("[attack]\ntype = \"fta\"\nmode = \"few-shot\"\nattack_num = 0\n");
        let mut s = Scheduler::new(&c);
        assert!((1..=50).all(|r| !s.roster(r, 0.0).ids.contains(&0)));
    }

    #[test]
    fn few_shot_budget_and_stop() {
        let c = cfg("[attack]\ntype = \"fta\"\nmode = \"few-shot\"\nattack_num = 5\n");
        let mut s = Scheduler::new(&c);
        let n = (1..=50).filter(|&r| s.roster(r, 0.1).attacker.is_some()).count();
        assert_eq!(n, 5);
        let mut s = Scheduler::new(&c);
        assert!(s.roster(1, f64::NAN).attacker.is_some());
        assert!(s.roster(2, 0.5).attacker.is_some());
        assert!(s.roster(3, 0.96).attacker.is_none());
        assert!((4..=20).all(|r| s.roster(r, 0.0).attacker.is_none()));
    }

    #[test]
    fn no_attack_means_all_agents_benign() {
        let c = cfg("");
        let mut s = Scheduler::new(&c);
        let r = s.roster(1, 0.0);
        assert_eq!(r.ids.len(), 10);
        assert!(r.attacker.is_none());
    }
}
