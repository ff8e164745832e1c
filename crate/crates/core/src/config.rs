//! Experiment configuration: a TOML document with one table per concern.
//! Missing keys take their defaults, unknown keys are rejected and every
//! range violation names the offending key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregatorConfig;
use crate::attack::PatchSpec;
use crate::error::{Error, Result};
use crate::nn::{mlp_specs, LayerSpec, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub fl: FlConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic(SyntheticConfig),
    Idx(IdxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub height: usize,
    pub width: usize,
    pub spread: f64,
    /// Fraction of nonzero coordinates in each class prototype.
    pub density: f64,
    /// Seed of the class centres and sample noise; the experiment seed when
    /// absent.
    pub seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            classes: 10,
            train_samples: 2000,
            test_samples: 1000,
            height: 16,
            width: 16,
            spread: 0.3,
            density: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Keep only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    #[serde(default = "defaults::total_agents")]
    pub total_agents: usize,
    #[serde(default = "defaults::agents_per_round")]
    pub agents_per_round: usize,
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::one")]
    pub server_lr: f64,
    #[serde(default = "defaults::dirichlet_alpha")]
    pub dirichlet_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden width of the default two-layer perceptron.
    pub hidden: usize,
    /// Explicit layer stack; overrides `hidden`.
    pub layers: Option<Vec<LayerSpec>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: 64, layers: None }
    }
}

impl ModelConfig {
    pub fn specs(&self, classes: usize) -> Vec<LayerSpec> {
        self.layers.clone().unwrap_or_else(|| mlp_specs(self.hidden, classes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    Fta,
    Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    FixedFrequency,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    #[serde(rename = "type")]
    pub kind: AttackKind,
    pub mode: AttackMode,
    /// Attack every `frequency`-th round from `start_round` on.
    pub frequency: usize,
    /// First round (1-based) in which the attacker may participate; later
    /// values model an attack after convergence.
    pub start_round: usize,
    /// Few-shot budget of attacked rounds.
    pub attack_num: usize,
    pub ba_stop_threshold: f64,
    pub malicious_ids: Vec<usize>,
    pub target_label: usize,
    pub poison_fraction: f64,
    /// l2 bound of the flexible trigger.
    pub trigger_size: f64,
    /// Leave target-class samples out of backdoor accuracy.
    pub exclude_target_in_ba: bool,
    pub patch: PatchSpec,
    pub generator: GeneratorConfig,
    pub local: LocalConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            mode: AttackMode::FixedFrequency,
            frequency: 1,
            start_round: 1,
            attack_num: 10,
            ba_stop_threshold: 0.95,
            malicious_ids: vec![0],
            target_label: 0,
            poison_fraction: 0.2,
            trigger_size: 2.0,
            exclude_target_in_ba: true,
            patch: PatchSpec::default(),
            generator: GeneratorConfig::default(),
            local: LocalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub hidden: usize,
    /// Multiplier on the tanh output before projection.
    pub output_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { epochs: 20, lr: 0.01, momentum: 0.9, batch_size: 32, dataset_size: 1024, hidden: 64, output_scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalConfig {
    pub benign_epochs: usize,
    pub benign_lr: f64,
    pub backdoor_epochs: usize,
    pub backdoor_lr: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            benign_epochs: 2,
            benign_lr: 0.1,
            backdoor_epochs: 10,
            backdoor_lr: 0.1,
            batch_size: 32,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Test samples used for the final feature diagnostic; 0 disables it.
    pub feature_panel: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { feature_panel: 200 }
    }
}

mod defaults {
    pub fn total_agents() -> usize {
        20
    }
    pub fn agents_per_round() -> usize {
        10
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn dirichlet_alpha() -> f64 {
        0.7
    }
}

fn check(ok: bool, key: &str, message: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::config(key, message))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), key, format!("must be positive, got {v}"))
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    check(v >= 0.0 && v.is_finite(), key, format!("must be non-negative, got {v}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(toml_key(&e), e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// The synthetic dataset block, if the config uses one.
    pub fn synthetic(&self) -> Option<&SyntheticConfig> {
        match &self.dataset {
            DatasetConfig::Synthetic(s) => Some(s),
            DatasetConfig::Idx(_) => None,
        }
    }

    /// Ids that never act maliciously.
    pub fn benign_ids(&self) -> Vec<usize> {
        (0..self.fl.total_agents).filter(|i| !self.is_malicious(*i)).collect()
    }

    pub fn is_malicious(&self, id: usize) -> bool {
        self.attack.kind != AttackKind::None && self.attack.malicious_ids.contains(&id)
    }

    /// Checks that do not need the data. Shape- and class-dependent checks run
    /// again in [`validate_against`](Self::validate_against) once the data
    /// is loaded.
    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Synthetic(s) = &self.dataset {
            check(s.classes >= 2, "dataset.classes", format!("must be at least 2, got {}", s.classes))?;
            check(
                s.train_samples >= s.classes,
                "dataset.train_samples",
                format!("must be at least the class count {}, got {}", s.classes, s.train_samples),
            )?;
            check(s.test_samples >= 1, "dataset.test_samples", "must be at least 1")?;
            check(s.height >= 1, "dataset.height", "must be at least 1")?;
            check(s.width >= 1, "dataset.width", "must be at least 1")?;
            positive("dataset.spread", s.spread)?;
            check(s.density > 0.0 && s.density <= 1.0, "dataset.density", format!("must be in (0, 1], got {}", s.density))?;
        }
        let fl = &self.fl;
        check(fl.total_agents >= 1, "fl.total_agents", "must be at least 1")?;
        check(fl.agents_per_round >= 1, "fl.agents_per_round", "must be at least 1")?;
        non_negative("fl.server_lr", fl.server_lr)?;
        positive("fl.dirichlet_alpha", fl.dirichlet_alpha)?;
        let a = &self.attack;
        let benign = self.benign_ids().len();
        check(fl.agents_per_round <= benign, "fl.agents_per_round", format!("must not exceed the {benign} benign agents"))?;
        check(fl.agents_per_round <= fl.total_agents, "fl.agents_per_round", "must not exceed fl.total_agents")?;
        if a.kind != AttackKind::None {
            check(!a.malicious_ids.is_empty(), "attack.malicious_ids", "must name at least one agent")?;
            let mut ids = a.malicious_ids.clone();
            ids.sort_unstable();
            ids.dedup();
            check(ids.len() == a.malicious_ids.len(), "attack.malicious_ids", "must not repeat an id")?;
            check(
                ids.iter().all(|&i| i < fl.total_agents),
                "attack.malicious_ids",
                format!("ids must be below fl.total_agents = {}", fl.total_agents),
            )?;
        }
        check(a.frequency >= 1, "attack.frequency", "must be at least 1")?;
        check(a.start_round >= 1, "attack.start_round", "rounds are numbered from 1")?;
        check(
            a.mode != AttackMode::FewShot || a.attack_num <= fl.rounds,
            "attack.attack_num",
            format!("must not exceed fl.rounds = {}", fl.rounds),
        )?;
        check(
            (0.0..=1.0).contains(&a.ba_stop_threshold),
            "attack.ba_stop_threshold",
            format!("must lie in [0, 1], got {}", a.ba_stop_threshold),
        )?;
        check(
            (0.0..=1.0).contains(&a.poison_fraction),
            "attack.poison_fraction",
            format!("must lie in [0, 1], got {}", a.poison_fraction),
        )?;
        positive("attack.trigger_size", a.trigger_size)?;
        let g = &a.generator;
        non_negative("attack.generator.lr", g.lr)?;
        check((0.0..1.0).contains(&g.momentum), "attack.generator.momentum", "must lie in [0, 1)")?;
        check(g.batch_size >= 1, "attack.generator.batch_size", "must be at least 1")?;
        check(g.dataset_size >= 1, "attack.generator.dataset_size", "must be at least 1")?;
        check(g.hidden >= 1, "attack.generator.hidden", "must be at least 1")?;
        positive("attack.generator.output_scale", g.output_scale)?;
        let l = &a.local;
        check(l.benign_epochs >= 1, "attack.local.benign_epochs", "must be at least 1")?;
        check(l.backdoor_epochs >= 1, "attack.local.backdoor_epochs", "must be at least 1")?;
        non_negative("attack.local.benign_lr", l.benign_lr)?;
        non_negative("attack.local.backdoor_lr", l.backdoor_lr)?;
        check(l.batch_size >= 1, "attack.local.batch_size", "must be at least 1")?;
        check((0.0..1.0).contains(&l.momentum), "attack.local.momentum", "must lie in [0, 1)")?;
        non_negative("attack.local.weight_decay", l.weight_decay)?;
        check(self.model.hidden >= 1, "model.hidden", "must be at least 1")?;
        self.aggregator.validate(fl.agents_per_round)?;
        if let Some(s) = self.synthetic() {
            self.validate_against(Shape::image(s.height, s.width), s.classes)?;
        }
        Ok(())
    }

    /// Checks that depend on the input shape and class count.
    pub fn validate_against(&self, shape: Shape, classes: usize) -> Result<()> {
        let a = &self.attack;
        check(a.target_label < classes, "attack.target_label", format!("must be below the class count {classes}, got {}", a.target_label))?;
        if a.kind == AttackKind::Patch {
            a.patch.validate(shape).map_err(|e| Error::config("attack.patch", e.to_string()))?;
        }
        if let Some(layers) = &self.model.layers {
            let net = crate::nn::Network::<f64>::zeros(shape, layers).map_err(|e| Error::config("model.layers", e.to_string()))?;
            check(
                net.output_dim() == classes,
                "model.layers",
                format!("last layer has {} outputs, the data has {classes} classes", net.output_dim()),
            )?;
        }
        if let Some(k) = self.aggregator.sparsefed_k {
            let d = crate::nn::Network::<f64>::zeros(shape, &self.model.specs(classes))
                .map_err(|e| Error::config("model.layers", e.to_string()))?
                .num_params();
            check(k <= d, "aggregator.sparsefed_k", format!("must not exceed the model dimension {d}"))?;
        }
        Ok(())
    }

    /// Sets a dotted key (for example `attack.poison_fraction`) from a
    /// TOML value literal and re-validates.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::config("<document>", e.message().to_string()))?;
        let parsed: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let (last, parents) = parts.split_last().ok_or_else(|| Error::config(key, "empty key"))?;
        let mut table = &mut doc;
        for p in parents {
            table = table
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| Error::config(key, format!("'{p}' is not a table")))?;
        }
        table.insert(last.to_string(), parsed);
        let text = toml::to_string(&doc).map_err(|e| Error::config(key, e.to_string()))?;
        Self::from_toml(&text)
    }
}

fn toml_key(e: &toml::de::Error) -> String {
    let msg = e.message();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    if let Some(rest) = msg.strip_prefix("missing field `") {
        if let Some(end) = rest.find('`') {
            return rest[..end].to_string();
        }
    }
    "<document>".to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "synthetic"

[fl]
rounds = 5
"#;

    fn key_of(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.fl.total_agents, 20);
        assert_eq!(c.fl.agents_per_round, 10);
        assert_eq!(c.fl.dirichlet_alpha, 0.7);
        let a = &c.attack;
        assert_eq!(a.poison_fraction, 0.2);
        assert_eq!(a.generator.dataset_size, 1024);
        assert_eq!(a.generator.epochs, 20);
        assert_eq!(a.generator.lr, 0.01);
        assert_eq!(a.local.benign_epochs, 2);
        assert_eq!(a.local.benign_lr, 0.1);
        assert_eq!(a.local.backdoor_epochs, 10);
        assert_eq!(a.local.backdoor_lr, 0.1);
        assert_eq!(a.local.momentum, 0.9);
        assert_eq!(a.local.weight_decay, 1e-4);
        assert_eq!(c.aggregator.trim_m, 2);
    }

    #[test]
    fn range_error_names_key() {
        let text = format!("{MINIMAL}\n[attack]\ntype = \"fta\"\npoison_fraction = 1.5\n");
        assert_eq!(key_of(ExperimentConfig::from_toml(&text)), "attack.poison_fraction");
        let text = format!("{MINIMAL}\n[attack]\ntarget_label = 10\n");
        assert_eq!(key_of(ExperimentConfig::from_toml(&text)), "attack.target_label");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[attack]\npoison_fractoin = 0.1\n");
        assert_eq!(key_of(ExperimentConfig::from_toml(&text)), "poison_fractoin");
        let text = "[dataset]\nkind = \"synthetic\"\nclases = 3\n[fl]\nrounds = 1\n";
        assert_eq!(key_of(ExperimentConfig::from_toml(text)), "clases");
        assert!(ExperimentConfig::from_toml("[dataset]\nkind = \"synthetic\"\n").is_err());
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{MINIMAL}\n[model]\nlayers = [{{ type = \"dense\", units = 16 }}, {{ type = \"relu\" }}, {{ type = \"dense\", units = 10 }}]\n[attack]\ntype = \"patch\"\nmalicious_ids = [0, 3]\n[aggregator]\nrule = \"multi-krum\"\nmulti_krum_c = 6\n"
        );
        let a = ExperimentConfig::from_toml(&text).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        let d = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(d, ExperimentConfig::from_toml(&d.to_toml().unwrap()).unwrap());
    }

    #[test]
    fn idx_block_parses() {
        let text = "[dataset]\nkind = \"idx\"\ntrain_images = \"a\"\ntrain_labels = \"b\"\ntest_images = \"c\"\ntest_labels = \"d\"\n[fl]\nrounds = 1\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert!(matches!(c.dataset, DatasetConfig::Idx(_)));
    }

    #[test]
    fn overrides() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let d = c.with_override("attack.poison_fraction", "0.4").unwrap();
        assert_eq!(d.attack.poison_fraction, 0.4);
        let e = c.with_override("aggregator.rule", "median").unwrap();
        assert_eq!(e.aggregator.rule, crate::aggregation::Rule::Median);
        assert_eq!(key_of(c.with_override("attack.poison_fraction", "2")), "attack.poison_fraction");
    }

    #[test]
    fn too_many_agents_per_round() {
        let text = "[dataset]\nkind = \"synthetic\"\n[fl]\nrounds = 1\ntotal_agents = 10\n[attack]\ntype = \"fta\"\n";
        assert_eq!(key_of(ExperimentConfig::from_toml(text)), "fl.agents_per_round");
    }
}
