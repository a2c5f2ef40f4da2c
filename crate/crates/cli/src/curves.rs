//! Learning-curve export from a run directory.
//!
//! For every per-seed artifact, `curves/curves_<label>_<seed>.csv` holds the
//! long-format records of all phases (`epoch,split,group,loss,acc`, split
//! tagged `phase1/train`, `phase2/val`, ...). For every job,
//! `curves/summary_<label>.csv` holds `epoch,train_wg,val_avg,val_wg` of the
//! last phase with records, averaged over seeds.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crois_core::trainer::{write_curves_csv, write_summary_csv};
use crois_core::EpochRecord;

use crate::error::CliError;
use crate::runner::SeedArtifact;

/// Reads every per-seed artifact of a run, sorted by label and seed.
pub fn load_artifacts(run_dir: &Path) -> Result<Vec<SeedArtifact>, CliError> {
    let runs = run_dir.join("runs");
    let entries = fs::read_dir(&runs).map_err(|e| {
        CliError::Config(format!("{} has no per-seed records ({}): {e}", run_dir.display(), runs.display()))
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let artifact: SeedArtifact = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        out.push(artifact);
    }
    out.sort_by(|a, b| (&a.label, a.listed_seed).cmp(&(&b.label, b.listed_seed)));
    Ok(out)
}

fn last_curve(a: &SeedArtifact) -> Option<&[EpochRecord]> {
    a.run.phases.iter().rev().find(|p| !p.records.is_empty()).map(|p| p.records.as_slice())
}

/// Writes the curve files and returns their paths.
pub fn export_curves(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let artifacts = load_artifacts(run_dir)?;
    if artifacts.is_empty() {
        return Err(CliError::Config(format!("{} has no per-seed records", run_dir.display())));
    }
    let dir = run_dir.join("curves");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut by_label: BTreeMap<&str, Vec<&SeedArtifact>> = BTreeMap::new();
    for a in &artifacts {
        if last_curve(a).is_none() {
            return Err(CliError::Config(format!(
                "run {} seed {} has no epoch records",
                a.label, a.listed_seed
            )));
        }
        let path = dir.join(format!("curves_{}_{}.csv", a.label, a.listed_seed));
        let mut buf = Vec::new();
        let mut header = true;
        for phase in &a.run.phases {
            write_curves_csv(&phase.records, &phase.name, header, &mut buf)?;
            header = false;
        }
        fs::write(&path, buf)?;
        written.push(path);
        by_label.entry(&a.label).or_default().push(a);
    }
    for (label, runs) in by_label {
        let streams: Vec<&[EpochRecord]> = runs.iter().filter_map(|a| last_curve(a)).collect();
        let path = dir.join(format!("summary_{label}.csv"));
        let mut buf = Vec::new();
        write_summary_csv(&streams, &mut buf)?;
        fs::write(&path, buf)?;
        written.push(path);
    }
    Ok(written)
}
