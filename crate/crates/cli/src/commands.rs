use std::fs;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use fta_core::check::{format_table, CheckSuite};
use fta_core::config::{AttackKind, ExperimentConfig};
use fta_core::metrics::benign_accuracy;
use fta_core::orchestrator::{RoundReport, Simulation};
use fta_core::output::{prepare_out_dir, write_run, CENTROIDS_FILE, FEATURES_FILE};
use fta_core::{checkpoint, Error};

/// File name of the resolved config written next to the results.
pub const CONFIG_FILE: &str = "config.toml";

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
    if let Some(s) = seed {
        cfg.fl.seed = s;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn prepare(dir: &Path, force: bool) -> Result<()> {
    match prepare_out_dir(dir, force) {
        Err(e @ Error::OutputExists { .. }) => bail!("{e} (pass --force to write into it anyway)"),
        other => Ok(other?),
    }
}

fn simulate(cfg: &ExperimentConfig) -> Result<(Vec<RoundReport>, Simulation<f64>)> {
    let mut sim = Simulation::<f64>::new(cfg)?;
    let mut reports = Vec::with_capacity(cfg.fl.rounds);
    while sim.round() < cfg.fl.rounds {
        let r = sim.step()?;
        log::info!(
            "round {:>4}  benign_acc {:.4}  backdoor_acc {:.4}  accepted {}/{}",
            r.round,
            r.benign_acc,
            r.backdoor_acc,
            r.accepted.len(),
            r.roster.len()
        );
        reports.push(r);
    }
    Ok((reports, sim))
}

fn run_into(cfg: &ExperimentConfig, out: &Path, timing: bool) -> Result<Vec<RoundReport>> {
    fs::write(out.join(CONFIG_FILE), cfg.to_toml()?)?;
    let (reports, sim) = simulate(cfg)?;
    let files = write_run(out, &reports, &sim, timing)?;
    log::info!("wrote {}", files.rounds.display());
    Ok(reports)
}

pub fn run(config: &Path, out: &Path, seed: Option<u64>, force: bool, timing: bool) -> Result<ExitCode> {
    let cfg = load_config(config, seed)?;
    prepare(out, force)?;
    run_into(&cfg, out, timing)?;
    Ok(ExitCode::SUCCESS)
}

fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn sweep(config: &Path, out: &Path, seed: Option<u64>, force: bool, timing: bool, key: &str, values: &[String]) -> Result<ExitCode> {
    let base = load_config(config, seed)?;
    let variants = values.iter().map(|v| base.with_override(key, v).map(|c| (v.as_str(), c))).collect::<fta_core::Result<Vec<_>>>()?;
    prepare(out, force)?;
    let mut summary = csv::Writer::from_path(out.join("summary.csv"))?;
    summary.write_record([key, "rounds", "benign_acc", "backdoor_acc"])?;
    for (value, cfg) in variants {
        let dir = out.join(format!("{key}={value}"));
        prepare(&dir, force)?;
        log::info!("sweep {key} = {value}");
        let reports = run_into(&cfg, &dir, timing)?;
        let last = reports.last();
        summary.write_record([
            value.to_string(),
            reports.len().to_string(),
            fmt_metric(last.map(|r| r.benign_acc)),
            fmt_metric(last.map(|r| r.backdoor_acc)),
        ])?;
    }
    summary.flush()?;
    Ok(ExitCode::SUCCESS)
}

pub fn check(seed: u64) -> Result<ExitCode> {
    let results = CheckSuite { seed, ..CheckSuite::default() }.run();
    print!("{}", format_table(&results));
    Ok(if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn replay(config: &Path, global: &Path, generator: Option<&Path>, out: Option<&Path>, force: bool) -> Result<ExitCode> {
    let cfg = load_config(config, None)?;
    let mut sim = Simulation::<f64>::new(&cfg)?;
    let global_params = checkpoint::load(global).with_context(|| format!("reading {}", global.display()))?;
    let generator_params = match (cfg.attack.kind, generator) {
        (AttackKind::Fta, None) => bail!("a flexible-trigger config needs --generator"),
        (AttackKind::Fta, Some(p)) => Some(checkpoint::load(p).with_context(|| format!("reading {}", p.display()))?),
        (_, Some(_)) => bail!("--generator is only meaningful for flexible-trigger configs"),
        (_, None) => None,
    };
    sim.restore(global_params, generator_params)?;
    let benign = benign_accuracy(sim.global(), sim.test_set())?;
    let backdoor = sim.backdoor_accuracy()?;
    println!("benign_acc,backdoor_acc");
    println!("{benign},{backdoor}");
    if let Some(dir) = out {
        prepare(dir, force)?;
        fs::write(dir.join("replay.csv"), format!("benign_acc,backdoor_acc\n{benign},{backdoor}\n"))?;
        if let Some(diag) = sim.feature_diagnostic(cfg.output.feature_panel)? {
            diag.write_pca_csv(&dir.join(FEATURES_FILE))?;
            diag.write_centroids_csv(&dir.join(CENTROIDS_FILE))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
