//! Run artifacts: the per-round CSV, checkpoints and feature tables.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::orchestrator::{RoundReport, Simulation};
use crate::scalar::Scalar;

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const GLOBAL_CHECKPOINT: &str = "global.ckpt";
pub const GENERATOR_CHECKPOINT: &str = "generator.ckpt";
pub const FEATURES_FILE: &str = "features.csv";
pub const CENTROIDS_FILE: &str = "centroids.csv";

pub const ROUNDS_HEADER: [&str; 10] = [
    "round",
    "roster",
    "benign_acc",
    "backdoor_acc",
    "malicious_norm",
    "mean_benign_norm",
    "cosine_sim",
    "euclid_dist",
    "accepted",
    "wall_ms",
];

fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Writes one header row and one row per report. Floats use the shortest
/// representation that round-trips, NaN is written as `NaN`, and `wall_ms`
/// is left empty unless `timing` is set so that the file is reproducible.
pub fn write_rounds<W: Write>(out: W, reports: &[RoundReport], timing: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(ROUNDS_HEADER)?;
    for r in reports {
        let wall = if timing { r.wall_ms.to_string() } else { String::new() };
        w.write_record([
            r.round.to_string(),
            join_ids(&r.roster),
            r.benign_acc.to_string(),
            r.backdoor_acc.to_string(),
            r.malicious_norm.to_string(),
            r.mean_benign_norm.to_string(),
            r.cosine_sim.to_string(),
            r.euclid_dist.to_string(),
            join_ids(&r.accepted),
            wall,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rounds_csv(path: impl AsRef<Path>, reports: &[RoundReport], timing: bool) -> Result<()> {
    write_rounds(fs::File::create(path)?, reports, timing)
}

/// Creates `dir` if needed. An existing non-empty directory is an error
/// unless `force` is set.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("{} exists and is not a directory", dir.display())));
        }
        if !force && fs::read_dir(dir)?.next().is_some() {
            return Err(Error::OutputExists { path: dir.to_path_buf() });
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Files written by [`write_run`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunArtifacts {
    pub rounds: PathBuf,
    pub global: PathBuf,
    pub generator: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub centroids: Option<PathBuf>,
}

/// Writes `rounds.csv`, the global checkpoint, the generator checkpoint
/// (flexible-trigger runs) and the feature tables (attacked runs) into `dir`.
pub fn write_run<T: Scalar>(dir: &Path, reports: &[RoundReport], sim: &Simulation<T>, timing: bool) -> Result<RunArtifacts> {
    let mut a = RunArtifacts { rounds: dir.join(ROUNDS_FILE), global: dir.join(GLOBAL_CHECKPOINT), ..Default::default() };
    write_rounds_csv(&a.rounds, reports, timing)?;
    checkpoint::save(&a.global, sim.global().params())?;
    if let Some(g) = sim.generator() {
        let path = dir.join(GENERATOR_CHECKPOINT);
        checkpoint::save(&path, g.params())?;
        a.generator = Some(path);
    }
    if let Some(diag) = sim.feature_diagnostic(sim.config().output.feature_panel)? {
        let (f, c) = (dir.join(FEATURES_FILE), dir.join(CENTROIDS_FILE));
        diag.write_pca_csv(&f)?;
        diag.write_centroids_csv(&c)?;
        a.features = Some(f);
        a.centroids = Some(c);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(round: usize) -> RoundReport {
        RoundReport {
            round,
            roster: vec![0, 3, 7],
            attacker: Some(0),
            benign_acc: 0.5,
            backdoor_acc: f64::NAN,
            update_norms: vec![],
            malicious_norm: 1.25,
            mean_benign_norm: 0.1,
            cosine_sim: -0.0,
            euclid_dist: 1e-20,
            accepted: vec![3, 7],
            wall_ms: 12.5,
        }
    }

    #[test]
    fn rounds_csv_layout() {
        let mut buf = Vec::new();
        write_rounds(&mut buf, &[report(1), report(2)], false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(
            lines[0],
            "round,roster,benign_acc,backdoor_acc,malicious_norm,mean_benign_norm,cosine_sim,euclid_dist,accepted,wall_ms"
        );
        assert_eq!(lines[1], "1,0;3;7,0.5,NaN,1.25,0.1,-0,0.00000000000000000001,3;7,");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[3], "");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn timing_fills_wall_ms() {
        let mut buf = Vec::new();
        write_rounds(&mut buf, &[report(1)], true).unwrap();
        assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(",12.5"));
    }

    #[test]
    fn out_dir_refuses_non_empty() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        prepare_out_dir(&dir, false).unwrap();
        prepare_out_dir(&dir, false).unwrap();
        fs::write(dir.join("x"), "1").unwrap();
        assert!(matches!(prepare_out_dir(&dir, false), Err(Error::OutputExists { .. })));
        prepare_out_dir(&dir, true).unwrap();
    }
}
