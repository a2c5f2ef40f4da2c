//! Config-driven experiment runner: `crois run`, `crois export-curves`,
//! `crois gen-data`.

pub mod config;
pub mod curves;
pub mod error;
pub mod runner;

use std::path::{Path, PathBuf};

use crois_core::data::{generate_synthetic, save_embedding_csv};
use crois_core::SyntheticSpec;

pub use config::{parse_config, parse_str, DatasetSpec, Document, Job};
pub use curves::export_curves;
pub use error::CliError;
pub use runner::{run, RunManifest, RunOutcome, SeedArtifact};

/// Output root when `--out` is not given.
pub const OUT_ENV: &str = "CROIS_OUT";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `run`: parses, then either prints the resolved configs (`dry_run`) or
/// executes them. Returns the run directory when something ran.
pub fn run_command(config: &Path, out: Option<&Path>, jobs: usize, dry_run: bool) -> Result<Option<PathBuf>, CliError> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config.display())))?;
    let doc = parse_config(config)?;
    if dry_run {
        println!("{}", runner::describe(&doc)?);
        return Ok(None);
    }
    let root = out.map_or_else(default_out_root, Path::to_path_buf);
    let outcome = run(&doc, config, &text, &root, jobs)?;
    println!("{}", outcome.run_dir.display());
    match outcome.failures() {
        0 => Ok(Some(outcome.run_dir)),
        failed => Err(CliError::JobsFailed {
            failed,
            total: outcome.manifest.jobs.len(),
        }),
    }
}

/// `gen-data`: one synthetic split from a TOML [`SyntheticSpec`].
pub fn gen_data(spec_path: &Path, out: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", spec_path.display())))?;
    let spec: SyntheticSpec = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let data = generate_synthetic(&spec).map_err(|e| CliError::Config(e.to_string()))?;
    save_embedding_csv(&data, out)?;
    Ok(())
}
