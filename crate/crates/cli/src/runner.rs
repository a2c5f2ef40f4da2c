//! Executes a parsed document and writes its artifacts.
//!
//! Layout of a run directory:
//!
//! ```text
//! manifest.json                 written before training, updated at the end
//! runs/<label>_p<p>_seed<s>.json one per job and seed
//! results/<label>.json          ExperimentResult of the job
//! aggregate.csv                 one row per job: mean and std over seeds
//! metrics.csv                   recipe,p,seed,group,count,acc,config_hash
//! curves/                       see [`crate::curves`]
//! ```
//!
//! Seeds: the listed seed `s` of experiment `e` runs as
//! `derive_seed(global, [e, s])`, so sweep points of one experiment share
//! their random streams.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crois_core::pipeline::{run_recipe, ExperimentResult, SeedRun};
use crois_core::seed::derive_seed;
use crois_core::RecipeConfig;

use crate::config::{DatasetSpec, Document, Job};
use crate::curves::export_curves;
use crate::error::CliError;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestJob {
    pub label: String,
    pub experiment_index: usize,
    pub sweep: Vec<String>,
    pub config_hash: String,
    /// Listed seeds and the seeds the recipe actually ran with.
    pub listed_seeds: Vec<u64>,
    pub run_seeds: Vec<u64>,
    pub config: RecipeConfig,
    pub status: JobStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: PathBuf,
    pub config_sha256: String,
    pub out_dir: PathBuf,
    pub timestamp_unix: u64,
    pub engine_version: String,
    pub global_seed: u64,
    pub dataset: DatasetSpec,
    pub jobs: Vec<ManifestJob>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(run_dir.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write(&self) -> Result<(), CliError> {
        let tmp = self.out_dir.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(self)?)?;
        fs::rename(tmp, self.out_dir.join("manifest.json"))?;
        Ok(())
    }
}

/// Per-seed artifact: the run plus enough provenance to find its manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArtifact {
    pub label: String,
    pub recipe: String,
    pub p: f64,
    pub listed_seed: u64,
    pub config_hash: String,
    pub run: SeedRun,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the resolved configuration, the provenance key of every row.
pub fn config_hash(config: &RecipeConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    sha256_hex(&json)[..16].to_string()
}

pub fn run_seeds(doc_seed: u64, job: &Job) -> Vec<u64> {
    job.config
        .seeds
        .iter()
        .map(|&s| derive_seed(doc_seed, &[job.experiment_index as u64, s]))
        .collect()
}

/// Resolved configs as JSON, for `--dry-run`.
pub fn describe(doc: &Document) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Resolved<'a> {
        seed: u64,
        dataset: &'a DatasetSpec,
        jobs: Vec<(&'a Job, String, Vec<u64>)>,
    }
    let jobs = doc
        .jobs
        .iter()
        .map(|j| (j, config_hash(&j.config), run_seeds(doc.seed, j)))
        .collect();
    Ok(serde_json::to_string_pretty(&Resolved {
        seed: doc.seed,
        dataset: &doc.dataset,
        jobs,
    })?)
}

fn unique_dir(root: &Path, stem: &str, timestamp: u64) -> Result<PathBuf, CliError> {
    fs::create_dir_all(root)?;
    for attempt in 0.. {
        let name = if attempt == 0 {
            format!("{stem}-{timestamp}")
        } else {
            format!("{stem}-{timestamp}-{attempt}")
        };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!()
}

pub fn seed_file_name(label: &str, p: f64, seed: u64) -> String {
    format!("{label}_p{p}_seed{seed}.json")
}

pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.manifest.jobs.iter().filter(|j| j.status == JobStatus::Failed).count()
    }
}

/// Runs every job of `doc` in a fresh directory under `out_root`, at most
/// `jobs` at a time. Failed jobs are recorded in the manifest and do not stop
/// the others.
pub fn run(doc: &Document, config_path: &Path, config_text: &str, out_root: &Path, jobs: usize) -> Result<RunOutcome, CliError> {
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let run_dir = unique_dir(out_root, stem, timestamp)?;
    let mut manifest = RunManifest {
        config_path: config_path.to_path_buf(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        out_dir: run_dir.clone(),
        timestamp_unix: timestamp,
        engine_version: ENGINE_VERSION.to_string(),
        global_seed: doc.seed,
        dataset: doc.dataset.clone(),
        jobs: doc
            .jobs
            .iter()
            .map(|j| ManifestJob {
                label: j.label.clone(),
                experiment_index: j.experiment_index,
                sweep: j.sweep.clone(),
                config_hash: config_hash(&j.config),
                listed_seeds: j.config.seeds.clone(),
                run_seeds: run_seeds(doc.seed, j),
                config: j.config.clone(),
                status: JobStatus::Pending,
                error: None,
            })
            .collect(),
    };
    manifest.write()?;
    if doc.jobs.is_empty() {
        return Ok(RunOutcome { run_dir, manifest });
    }
    fs::create_dir_all(run_dir.join("runs"))?;
    fs::create_dir_all(run_dir.join("results"))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} worker(s): {e}")))?;
    let outcomes: Vec<Result<ExperimentResult, String>> = pool.install(|| {
        doc.jobs
            .par_iter()
            .zip(manifest.jobs.par_iter())
            .map(|(job, entry)| run_job(doc, job, entry, &run_dir).map_err(|e| e.to_string()))
            .collect()
    });

    for (entry, outcome) in manifest.jobs.iter_mut().zip(&outcomes) {
        match outcome {
            Ok(_) => entry.status = JobStatus::Succeeded,
            Err(msg) => {
                log::error!("job {} failed: {msg}", entry.label);
                entry.status = JobStatus::Failed;
                entry.error = Some(msg.clone());
            }
        }
    }
    write_tables(&manifest, &outcomes, &run_dir)?;
    manifest.write()?;
    if outcomes.iter().any(Result::is_ok) {
        export_curves(&run_dir)?;
    }
    Ok(RunOutcome { run_dir, manifest })
}

fn run_job(doc: &Document, job: &Job, entry: &ManifestJob, run_dir: &Path) -> Result<ExperimentResult, CliError> {
    let bench = doc.dataset.load()?;
    let mut config = job.config.clone();
    config.seeds = entry.run_seeds.clone();
    let mut result = run_recipe(&bench, &config)?;
    // report the configuration as written, with the seeds as listed
    result.recipe = job.config.clone();
    for (run, &listed) in result.runs.iter().zip(&entry.listed_seeds) {
        let name = seed_file_name(&job.label, job.config.p, listed);
        let artifact = SeedArtifact {
            label: job.label.clone(),
            recipe: job.config.recipe.tag().to_string(),
            p: job.config.p,
            listed_seed: listed,
            config_hash: entry.config_hash.clone(),
            run: run.clone(),
        };
        fs::write(run_dir.join("runs").join(&name), serde_json::to_string_pretty(&artifact)?)?;
        result.artifacts.push(format!("runs/{name}"));
    }
    fs::write(
        run_dir.join("results").join(format!("{}.json", job.label)),
        serde_json::to_string_pretty(&result)?,
    )?;
    Ok(result)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn write_tables(manifest: &RunManifest, outcomes: &[Result<ExperimentResult, String>], run_dir: &Path) -> Result<(), CliError> {
    let mut agg = csv::Writer::from_path(run_dir.join("aggregate.csv"))?;
    agg.write_record([
        "label",
        "recipe",
        "p",
        "runs",
        "avg_mean",
        "avg_std",
        "wg_mean",
        "wg_std",
        "config_hash",
    ])?;
    let mut metrics = csv::Writer::from_path(run_dir.join("metrics.csv"))?;
    metrics.write_record(["recipe", "p", "seed", "group", "count", "acc", "config_hash"])?;
    for (entry, outcome) in manifest.jobs.iter().zip(outcomes) {
        let Ok(result) = outcome else { continue };
        let tag = entry.config.recipe.tag();
        let p = entry.config.p.to_string();
        let s = &result.summary;
        agg.write_record([
            entry.label.clone(),
            tag.to_string(),
            p.clone(),
            s.runs.to_string(),
            s.average_acc.mean.to_string(),
            opt(s.average_acc.std),
            s.worst_group_acc.mean.to_string(),
            opt(s.worst_group_acc.std),
            entry.config_hash.clone(),
        ])?;
        for (run, listed) in result.runs.iter().zip(&entry.listed_seeds) {
            let seed = listed.to_string();
            let test = &run.test;
            for (g, (acc, count)) in test.per_group_acc.iter().zip(&test.counts).enumerate() {
                metrics.write_record([tag, &p, &seed, &g.to_string(), &count.to_string(), &opt(*acc), &entry.config_hash])?;
            }
            let total: usize = test.counts.iter().sum();
            metrics.write_record([tag, &p, &seed, "avg", &total.to_string(), &test.average_acc.to_string(), &entry.config_hash])?;
            metrics.write_record([tag, &p, &seed, "wg", &total.to_string(), &test.worst_group_acc.to_string(), &entry.config_hash])?;
        }
        metrics.write_record([tag, &p, "mean", "avg", "", &s.average_acc.mean.to_string(), &entry.config_hash])?;
        metrics.write_record([tag, &p, "mean", "wg", "", &s.worst_group_acc.mean.to_string(), &entry.config_hash])?;
    }
    agg.flush()?;
    metrics.flush()?;
    Ok(())
}
