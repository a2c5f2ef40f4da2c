//! Experiment documents.
//!
//! A document is TOML. It holds either one experiment at the top level or a
//! list of `[[experiment]]` tables, plus an optional global `seed` and a
//! `dataset` (`"synthetic"`, or a table with `kind = "synthetic"` and
//! generator fields, or `kind = "csv"` with `train`, `val`, `test` paths).
//!
//! Experiment keys are the fields of [`RecipeConfig`]. Training keys
//! (`lr`, `l2`, `epochs`, ...) given at experiment level apply to both phases
//! unless the phase table sets them. A `sweep` table maps keys (bare or
//! dotted, e.g. `"phase2.l2"`) to value lists; the experiment expands to the
//! Cartesian product in key order.
//!
//! ```toml
//! seed = 7
//! dataset = "synthetic"
//!
//! [[experiment]]
//! recipe = "crois"
//! p = 0.3
//! lr = 0.01
//! [experiment.phase2]
//! epochs = 40
//! [experiment.sweep]
//! "phase2.l2" = [0.0, 1e-4, 1e-2, 1.0]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crois_core::data::{load_embedding_csv, load_embedding_csv_with};
use crois_core::pipeline::TestWeighting;
use crois_core::{Benchmark, Recipe, RecipeConfig, SyntheticBenchmark};

use crate::error::CliError;

/// Keys of a training phase that may be given once for both phases.
pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "momentum",
    "l2",
    "epochs",
    "batch_size",
    "eta_q",
    "group_adjustment",
    "eval_every",
    "sampling",
    "keep_epochs",
];

const RECIPES: &str = "erm, gdro_full, crois, ncrt, crois_val_only, crois_reduced_val, jtt_lite";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticBenchmark),
    Csv {
        train: PathBuf,
        val: PathBuf,
        test: PathBuf,
        /// Eval splits have a different group mix than training; test
        /// averages then use training group proportions.
        #[serde(default)]
        skewed_eval: bool,
    },
}

impl DatasetSpec {
    pub fn skewed_eval(&self) -> bool {
        match self {
            DatasetSpec::Synthetic(s) => s.eval_rho != s.rho,
            DatasetSpec::Csv { skewed_eval, .. } => *skewed_eval,
        }
    }

    pub fn load(&self) -> crois_core::Result<Benchmark> {
        match self {
            DatasetSpec::Synthetic(s) => s.generate(),
            DatasetSpec::Csv { train, val, test, .. } => {
                let parts = [train, val, test].map(|p| load_embedding_csv(p));
                let [train_d, val_d, test_d] = parts;
                let (train_d, val_d, test_d) = (train_d?, val_d?, test_d?);
                let k = train_d.n_classes().max(val_d.n_classes()).max(test_d.n_classes());
                let m = train_d.n_attributes().max(val_d.n_attributes()).max(test_d.n_attributes());
                let fix = |d: crois_core::GroupedDataset, path: &Path| {
                    if d.n_classes() == k && d.n_attributes() == m {
                        Ok(d)
                    } else {
                        load_embedding_csv_with(path, k, m)
                    }
                };
                Ok(Benchmark {
                    train: fix(train_d, train)?,
                    val: fix(val_d, val)?,
                    test: fix(test_d, test)?,
                })
            }
        }
    }
}

/// One resolved experiment after sweep expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    /// Unique within the document; used in file names.
    pub label: String,
    /// Position of the experiment in the document, before sweep expansion.
    pub experiment_index: usize,
    /// Sweep assignment that produced this job, `key=value` pairs.
    pub sweep: Vec<String>,
    pub config: RecipeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub jobs: Vec<Job>,
}

pub fn parse_config(path: &Path) -> Result<Document, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_str(&text, base)
}

/// Parses a document; relative dataset paths resolve against `base`.
pub fn parse_str(text: &str, base: &Path) -> Result<Document, CliError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut doc = toml_to_json(table)?;
    let seed = match doc.remove("seed") {
        None => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| CliError::Config(format!("seed: expected a nonnegative integer, got {v}")))?,
    };
    let dataset = parse_dataset(doc.remove("dataset"), base)?;
    let experiments: Vec<Map<String, Value>> = match doc.remove("experiment") {
        Some(Value::Array(items)) => {
            if !doc.is_empty() {
                let keys: Vec<&String> = doc.keys().collect();
                return Err(CliError::Config(format!(
                    "unknown top-level key(s) {keys:?} next to [[experiment]]"
                )));
            }
            items
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    Value::Object(m) => Ok(m),
                    other => Err(CliError::Config(format!("experiment[{i}]: expected a table, got {other}"))),
                })
                .collect::<Result<_, _>>()?
        }
        Some(other) => return Err(CliError::Config(format!("experiment: expected an array of tables, got {other}"))),
        None if doc.is_empty() => Vec::new(),
        None => vec![doc],
    };
    let skewed = dataset.skewed_eval();
    let mut jobs = Vec::new();
    for (index, exp) in experiments.into_iter().enumerate() {
        jobs.extend(expand_experiment(index, exp, skewed)?);
    }
    dedupe_labels(&mut jobs);
    Ok(Document { seed, dataset, jobs })
}

fn toml_to_json(table: toml::Table) -> Result<Map<String, Value>, CliError> {
    match serde_json::to_value(table).map_err(|e| CliError::Config(e.to_string()))? {
        Value::Object(m) => Ok(m),
        _ => unreachable!("a table serializes to an object"),
    }
}

fn parse_dataset(value: Option<Value>, base: &Path) -> Result<DatasetSpec, CliError> {
    let value = match value {
        None => return Ok(DatasetSpec::Synthetic(SyntheticBenchmark::default())),
        Some(Value::String(s)) if s == "synthetic" => return Ok(DatasetSpec::Synthetic(SyntheticBenchmark::default())),
        Some(Value::String(s)) => {
            return Err(CliError::Config(format!(
                "dataset: unknown shorthand {s:?}; use \"synthetic\" or a table with kind = \"csv\""
            )))
        }
        Some(v) => v,
    };
    let spec: DatasetSpec = deserialize("dataset", value)?;
    Ok(match spec {
        DatasetSpec::Csv {
            train,
            val,
            test,
            skewed_eval,
        } => DatasetSpec::Csv {
            train: base.join(train),
            val: base.join(val),
            test: base.join(test),
            skewed_eval,
        },
        s => s,
    })
}

fn deserialize<T: serde::de::DeserializeOwned>(context: &str, value: Value) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let at = if path == "." { context.to_string() } else { format!("{context}.{path}") };
        CliError::Config(format!("{at}: {}", e.into_inner()))
    })
}

fn expand_experiment(index: usize, mut exp: Map<String, Value>, skewed: bool) -> Result<Vec<Job>, CliError> {
    let ctx = format!("experiment[{index}]");
    let sweep = match exp.remove("sweep") {
        None => Vec::new(),
        Some(Value::Object(m)) => m
            .into_iter()
            .map(|(k, v)| match v {
                Value::Array(vals) if !vals.is_empty() => Ok((k, vals)),
                other => Err(CliError::Config(format!(
                    "{ctx}.sweep.{k}: expected a nonempty list, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        Some(other) => return Err(CliError::Config(format!("{ctx}.sweep: expected a table, got {other}"))),
    };
    let name = match exp.remove("name") {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(other) => return Err(CliError::Config(format!("{ctx}.name: expected a string, got {other}"))),
    };
    let mut jobs = Vec::new();
    for combo in cartesian(&sweep) {
        let mut table = exp.clone();
        let mut assignment = Vec::new();
        for (key, value) in combo {
            assignment.push(format!("{key}={value}"));
            set_path(&mut table, key, value.clone(), &ctx)?;
        }
        let config = resolve(table, skewed, &ctx)?;
        let base = name.clone().unwrap_or_else(|| config.recipe.tag().to_string());
        let label = if sweep.is_empty() { base } else { format!("{base}-{}", jobs.len()) };
        jobs.push(Job {
            label,
            experiment_index: index,
            sweep: assignment,
            config,
        });
    }
    Ok(jobs)
}

fn cartesian(sweep: &[(String, Vec<Value>)]) -> Vec<Vec<(&str, &Value)>> {
    let mut out: Vec<Vec<(&str, &Value)>> = vec![Vec::new()];
    for (key, values) in sweep {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((key.as_str(), v));
                    p
                })
            })
            .collect();
    }
    out
}

fn set_path(table: &mut Map<String, Value>, key: &str, value: Value, ctx: &str) -> Result<(), CliError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("split yields one part");
    let mut cur = table;
    for part in parts {
        let entry = cur.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        cur = entry
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{ctx}.sweep: {key} descends into a non-table value")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Applies shared training keys, merges over the recipe defaults and
/// deserializes, rejecting unknown keys.
fn resolve(mut table: Map<String, Value>, skewed: bool, ctx: &str) -> Result<RecipeConfig, CliError> {
    let recipe_value = table.get("recipe").cloned().ok_or_else(|| {
        CliError::Config(format!(
            "{ctx}: missing key `recipe`; it has no default (one of {RECIPES})"
        ))
    })?;
    let recipe: Recipe = deserialize(&format!("{ctx}.recipe"), recipe_value)?;
    for phase in ["phase1", "phase2"] {
        match table.get(phase) {
            None | Some(Value::Object(_)) => {}
            Some(other) => return Err(CliError::Config(format!("{ctx}.{phase}: expected a table, got {other}"))),
        }
    }
    for key in TRAIN_KEYS {
        if let Some(v) = table.remove(*key) {
            for phase in ["phase1", "phase2"] {
                let t = table
                    .entry(phase)
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("checked above");
                t.entry(*key).or_insert_with(|| v.clone());
            }
        }
    }
    if skewed && !table.contains_key("test_weighting") {
        table.insert(
            "test_weighting".into(),
            serde_json::to_value(TestWeighting::TrainWeighted).expect("enum serializes"),
        );
    }
    let mut merged = serde_json::to_value(RecipeConfig::new(recipe)).expect("config serializes");
    merge(&mut merged, Value::Object(table));
    let config: RecipeConfig = deserialize(ctx, merged)?;
    config.validate().map_err(|e| CliError::Config(format!("{ctx}: {e}")))?;
    Ok(config)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn dedupe_labels(jobs: &mut [Job]) {
    let labels: Vec<String> = jobs.iter().map(|j| j.label.clone()).collect();
    for (i, job) in jobs.iter_mut().enumerate() {
        if labels.iter().filter(|l| **l == job.label).count() > 1 {
            job.label = format!("{}-e{i}", job.label);
        }
    }
}
