//! Experiment recipes.
//!
//! Each recipe runs once per seed on a [`Benchmark`] and reports test metrics
//! of the model it selects:
//!
//! | recipe              | phase 1 (feature extractor)           | phase 2 (retraining)                        |
//! |---------------------|---------------------------------------|---------------------------------------------|
//! | `erm`               | ERM on all training rows              | -                                           |
//! | `gdro_full`         | GDRO on all training rows             | -                                           |
//! | `crois`             | ERM on the unlabeled split            | retrain on the disjoint labeled split       |
//! | `ncrt`              | ERM on all training rows              | retrain on a fraction of the same rows      |
//! | `crois_val_only`    | ERM on all training rows              | retrain on half of val, select on the other |
//! | `crois_reduced_val` | ERM on all training rows              | retrain on a val fraction, select on train  |
//! | `jtt_lite`          | short ERM, then error-set pseudo-groups | GDRO over pseudo-groups                   |
//!
//! Phase 1 is selected by validation average accuracy, phase 2 by validation
//! worst-group accuracy (training worst-group accuracy in reduced-validation
//! mode).

use serde::{Deserialize, Serialize};

use crate::data::{
    floor_pow2, candidate_batch_quotas, make_split, sample_fraction, save_embedding_csv, split_val_in_half,
    Benchmark, GroupedDataset,
};
use crate::diffnet::{rescale_head, MlpModel, Scope};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_seeds, evaluate, group_proportions, GroupMetrics, MetricSummary, Stat, Weighting};
use crate::objectives::pseudo_group_dataset;
use crate::seed::{derive_seed, stream_label};
use crate::trainer::{select, train, Criterion, EpochRecord, Objective, TrainConfig, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Erm,
    GdroFull,
    Crois,
    Ncrt,
    CroisValOnly,
    CroisReducedVal,
    JttLite,
}

impl Recipe {
    pub fn tag(self) -> &'static str {
        match self {
            Recipe::Erm => "erm",
            Recipe::GdroFull => "gdro_full",
            Recipe::Crois => "crois",
            Recipe::Ncrt => "ncrt",
            Recipe::CroisValOnly => "crois_val_only",
            Recipe::CroisReducedVal => "crois_reduced_val",
            Recipe::JttLite => "jtt_lite",
        }
    }
}

/// How the classifier is retrained in phase 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrainAlgorithm {
    #[default]
    Gdro,
    Reweight,
    Subsample,
    /// Row-norm rescaling of the head, power chosen on validation worst-group
    /// accuracy; no gradient steps.
    Rescale,
}

impl RetrainAlgorithm {
    fn objective(self) -> Objective {
        match self {
            RetrainAlgorithm::Gdro => Objective::Gdro,
            RetrainAlgorithm::Reweight => Objective::Reweight,
            RetrainAlgorithm::Subsample => Objective::Subsample,
            RetrainAlgorithm::Rescale => Objective::Erm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TestWeighting {
    #[default]
    Plain,
    /// Average accuracy with training group proportions, for eval splits
    /// whose group mix differs from training.
    TrainWeighted,
}

/// Reduced phase 1 for the error-set baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JttOverride {
    pub epochs: usize,
    /// Hidden widths of the phase-1 model; defaults to the recipe's.
    #[serde(default)]
    pub hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeConfig {
    pub recipe: Recipe,
    /// Fraction of training rows whose group labels are used.
    pub p: f64,
    pub retrain: RetrainAlgorithm,
    pub retrain_scope: Scope,
    pub hidden: Vec<usize>,
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
    /// Fraction of the validation set kept in reduced-validation mode.
    pub val_fraction: f64,
    pub seeds: Vec<u64>,
    pub stratify: bool,
    pub test_weighting: TestWeighting,
    pub rescale_grid: Vec<f64>,
    pub jtt: Option<JttOverride>,
}

impl RecipeConfig {
    pub fn new(recipe: Recipe) -> Self {
        Self {
            recipe,
            p: 0.3,
            retrain: RetrainAlgorithm::Gdro,
            retrain_scope: Scope::HeadOnly,
            hidden: vec![64],
            phase1: TrainConfig::default(),
            phase2: TrainConfig::default(),
            val_fraction: 1.0,
            seeds: vec![0, 1, 2],
            stratify: false,
            test_weighting: TestWeighting::Plain,
            rescale_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            jtt: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Range(format!("p must lie in [0, 1], got {}", self.p)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction <= 1.0) {
            return Err(Error::Range(format!("val_fraction must lie in (0, 1], got {}", self.val_fraction)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if matches!(self.recipe, Recipe::Crois | Recipe::Ncrt) && self.p == 0.0 {
            return Err(Error::Config(format!("{} needs p > 0", self.recipe.tag())));
        }
        if self.recipe == Recipe::JttLite && self.jtt.is_none() {
            return Err(Error::Config("jtt_lite needs a phase-1 override ([jtt] epochs)".into()));
        }
        if self.retrain == RetrainAlgorithm::Rescale && self.rescale_grid.is_empty() {
            return Err(Error::Config("rescale retraining needs a nonempty rescale_grid".into()));
        }
        self.phase1.validate()?;
        self.phase2.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleChoice {
    pub power: f64,
    pub val_wg_acc: f64,
    /// `(power, val worst-group accuracy)` for the whole grid.
    pub grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRun {
    pub name: String,
    pub criterion: Option<Criterion>,
    pub selected_epoch: Option<usize>,
    pub records: Vec<EpochRecord>,
    pub rescale: Option<RescaleChoice>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub test: GroupMetrics,
    pub phases: Vec<PhaseRun>,
    /// Audited reads of group labels on the data used by the ERM phase; only
    /// present for recipes whose first phase must not use group labels.
    pub phase1_group_label_reads: Option<usize>,
    pub train_size: usize,
    pub retrain_size: Option<usize>,
    pub notes: Vec<String>,
}

impl SeedRun {
    pub fn final_phase(&self) -> &PhaseRun {
        self.phases.last().expect("every run has a phase")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub recipe: RecipeConfig,
    pub runs: Vec<SeedRun>,
    pub summary: MetricSummary,
    pub artifacts: Vec<String>,
}

impl ExperimentResult {
    fn from_runs(recipe: &RecipeConfig, runs: Vec<SeedRun>) -> Result<Self> {
        let tests: Vec<GroupMetrics> = runs.iter().map(|r| r.test.clone()).collect();
        Ok(Self {
            recipe: recipe.clone(),
            summary: aggregate_seeds(&tests)?,
            runs,
            artifacts: Vec::new(),
        })
    }

    pub fn mean_wg(&self) -> f64 {
        self.summary.worst_group_acc.mean
    }

    pub fn mean_avg(&self) -> f64 {
        self.summary.average_acc.mean
    }
}

/// Per-seed random streams.
#[derive(Debug, Clone, Copy)]
struct Seeds {
    split: u64,
    init: u64,
    phase1: u64,
    phase2: u64,
}

impl Seeds {
    fn new(seed: u64) -> Self {
        let d = |name: &str| derive_seed(seed, &[stream_label(name)]);
        Self {
            split: d("split"),
            init: d("init"),
            phase1: d("phase1"),
            phase2: d("phase2"),
        }
    }
}

struct Ctx<'a> {
    bench: &'a Benchmark,
    cfg: &'a RecipeConfig,
    seeds: Seeds,
    seed: u64,
}

impl Ctx<'_> {
    fn fresh_model(&self, hidden: &[usize]) -> MlpModel {
        let b = self.bench;
        MlpModel::new(b.train.input_dim(), hidden, b.train.n_classes(), self.seeds.init)
    }

    fn weighting(&self) -> Weighting {
        match self.cfg.test_weighting {
            TestWeighting::Plain => Weighting::Plain,
            TestWeighting::TrainWeighted => Weighting::TrainWeighted(group_proportions(&self.bench.train)),
        }
    }

    fn options(&self) -> TrainOptions {
        TrainOptions {
            val_weighting: self.weighting(),
            train_group_metrics: false,
        }
    }

    fn phase1_config(&self) -> TrainConfig {
        TrainConfig {
            objective: Objective::Erm,
            scope: Scope::Full,
            seed: self.seeds.phase1,
            ..self.cfg.phase1.clone()
        }
    }

    fn phase2_config(&self) -> TrainConfig {
        TrainConfig {
            objective: self.cfg.retrain.objective(),
            scope: self.cfg.retrain_scope,
            seed: self.seeds.phase2,
            ..self.cfg.phase2.clone()
        }
    }

    fn test_metrics(&self, model: &MlpModel) -> Result<GroupMetrics> {
        evaluate(model, &self.bench.test, &self.weighting())
    }
}

/// Trains and selects; returns the phase log and the selected model.
fn fit(
    name: &str,
    model: MlpModel,
    train_set: &GroupedDataset,
    val: Option<&GroupedDataset>,
    config: &TrainConfig,
    options: &TrainOptions,
    criterion: Criterion,
) -> Result<(PhaseRun, MlpModel)> {
    let outcome = train(model, train_set, val, config, options)?;
    let (epoch, selected) = select(&outcome.records, &outcome.checkpoints, criterion)?;
    let selected = selected.clone();
    Ok((
        PhaseRun {
            name: name.into(),
            criterion: Some(criterion),
            selected_epoch: Some(epoch),
            records: outcome.records,
            rescale: None,
        },
        selected,
    ))
}

/// ERM on `rows` of the training set without reading their group labels.
fn erm_phase(ctx: &Ctx<'_>, rows: &[usize], model: MlpModel, config: &TrainConfig) -> Result<(PhaseRun, MlpModel, usize)> {
    let unlabeled = ctx.bench.train.subset(rows);
    let (phase, selected) = fit(
        "phase1",
        model,
        &unlabeled,
        Some(&ctx.bench.val),
        config,
        &ctx.options(),
        Criterion::ValAverage,
    )?;
    Ok((phase, selected, unlabeled.group_reads()))
}

fn require_groups(data: &GroupedDataset, what: &str) -> Result<()> {
    if let Some(g) = data.group_counts().iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup {
            group: g,
            context: format!("no example of this group in the {what}; robust retraining cannot sample it"),
        });
    }
    Ok(())
}

/// Phase 2 on `retrain_set`, selected on `select_set` (validation worst-group
/// accuracy) or, without one, on training worst-group accuracy.
fn retrain_phase(
    ctx: &Ctx<'_>,
    feature_model: &MlpModel,
    retrain_set: &GroupedDataset,
    select_set: Option<&GroupedDataset>,
    config: &TrainConfig,
) -> Result<(PhaseRun, MlpModel)> {
    if ctx.cfg.retrain == RetrainAlgorithm::Rescale {
        let val = select_set.unwrap_or(retrain_set);
        let mut best: Option<(f64, f64, MlpModel)> = None;
        let mut grid = Vec::new();
        for &power in &ctx.cfg.rescale_grid {
            let m = rescale_head(feature_model, power)?;
            let wg = evaluate(&m, val, &Weighting::Plain)?.worst_group_acc;
            grid.push((power, wg));
            if best.as_ref().is_none_or(|(_, b, _)| wg > *b) {
                best = Some((power, wg, m));
            }
        }
        let (power, val_wg_acc, model) = best.expect("nonempty grid");
        return Ok((
            PhaseRun {
                name: "phase2".into(),
                criterion: Some(Criterion::ValWorstGroup),
                selected_epoch: None,
                records: Vec::new(),
                rescale: Some(RescaleChoice { power, val_wg_acc, grid }),
            },
            model,
        ));
    }
    if config.objective.needs_groups() {
        require_groups(retrain_set, "group-labeled retraining split")?;
    }
    let criterion = if select_set.is_some() {
        Criterion::ValWorstGroup
    } else {
        Criterion::TrainWorstGroup
    };
    let options = TrainOptions {
        train_group_metrics: select_set.is_none(),
        ..ctx.options()
    };
    fit("phase2", feature_model.clone(), retrain_set, select_set, config, &options, criterion)
}

fn all_rows(d: &GroupedDataset) -> Vec<usize> {
    (0..d.len()).collect()
}

fn run_seeds(bench: &Benchmark, cfg: &RecipeConfig, f: impl Fn(&Ctx<'_>) -> Result<SeedRun>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .iter()
        .map(|&seed| {
            let ctx = Ctx {
                bench,
                cfg,
                seeds: Seeds::new(seed),
                seed,
            };
            f(&ctx)
        })
        .collect::<Result<Vec<_>>>()?;
    ExperimentResult::from_runs(cfg, runs)
}

/// Dispatches on `cfg.recipe`.
pub fn run_recipe(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    match cfg.recipe {
        Recipe::Erm => run_erm(bench, cfg),
        Recipe::GdroFull => run_gdro_full(bench, cfg),
        Recipe::Crois => run_crois(bench, cfg),
        Recipe::Ncrt => run_ncrt(bench, cfg),
        Recipe::CroisValOnly => run_crois_val_only(bench, cfg),
        Recipe::CroisReducedVal => run_crois_reduced_val(bench, cfg),
        Recipe::JttLite => run_jtt_lite(bench, cfg),
    }
}

/// ERM baseline: phase-1 settings on all training rows, no group labels.
pub fn run_erm(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| {
        let rows = all_rows(&bench.train);
        let (phase, model, reads) = erm_phase(ctx, &rows, ctx.fresh_model(&cfg.hidden), &ctx.phase1_config())?;
        Ok(SeedRun {
            seed: ctx.seed,
            test: ctx.test_metrics(&model)?,
            phases: vec![phase],
            phase1_group_label_reads: Some(reads),
            train_size: rows.len(),
            retrain_size: None,
            notes: Vec::new(),
        })
    })
}

/// Single-phase GDRO on all group-labeled training rows with the phase-1
/// settings (scope included), selected by validation worst-group accuracy.
pub fn run_gdro_full(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| {
        let config = TrainConfig {
            objective: Objective::Gdro,
            seed: ctx.seeds.phase1,
            ..cfg.phase1.clone()
        };
        if config.scope == Scope::HeadOnly {
            return Err(Error::Config(
                "gdro_full with head_only scope needs a trained extractor; use run_gdro_on".into(),
            ));
        }
        gdro_seed_run(ctx, ctx.fresh_model(&cfg.hidden), &bench.train, &config)
    })
}

fn gdro_seed_run(ctx: &Ctx<'_>, initial: MlpModel, train_set: &GroupedDataset, config: &TrainConfig) -> Result<SeedRun> {
    require_groups(train_set, "training set")?;
    let (phase, model) = fit(
        "gdro",
        initial,
        train_set,
        Some(&ctx.bench.val),
        config,
        &ctx.options(),
        Criterion::ValWorstGroup,
    )?;
    Ok(SeedRun {
        seed: ctx.seed,
        test: ctx.test_metrics(&model)?,
        phases: vec![phase],
        phase1_group_label_reads: None,
        train_size: train_set.len(),
        retrain_size: None,
        notes: Vec::new(),
    })
}

/// GDRO from a given model on a given training set, one seed. With a
/// head-only scope this is the retraining phase of [`run_crois`] in isolation.
pub fn run_gdro_on(
    bench: &Benchmark,
    cfg: &RecipeConfig,
    seed: u64,
    initial: MlpModel,
    train_set: &GroupedDataset,
    config: &TrainConfig,
) -> Result<SeedRun> {
    let ctx = Ctx {
        bench,
        cfg,
        seeds: Seeds::new(seed),
        seed,
    };
    let config = TrainConfig {
        objective: Objective::Gdro,
        ..config.clone()
    };
    gdro_seed_run(&ctx, initial, train_set, &config)
}

/// Intermediate state of a two-phase run, exposed for equivalence checks
/// and ablations.
#[derive(Debug, Clone)]
pub struct TwoPhase {
    pub feature_model: MlpModel,
    pub retrain_set: GroupedDataset,
    pub retrain_rows: Vec<usize>,
    pub phase2_config: TrainConfig,
    pub run: SeedRun,
    pub final_model: MlpModel,
}

fn crois_seed(ctx: &Ctx<'_>) -> Result<TwoPhase> {
    let cfg = ctx.cfg;
    let train_set = &ctx.bench.train;
    let split = make_split(train_set, cfg.p, ctx.seeds.split, cfg.stratify)?;
    if split.unlabeled.is_empty() {
        return Err(Error::InsufficientData(format!(
            "p = {} leaves no group-unlabeled rows for the feature extractor",
            cfg.p
        )));
    }
    if split.labeled.is_empty() {
        return Err(Error::InsufficientData(format!("p = {} leaves no group-labeled rows", cfg.p)));
    }
    let (phase1, feature_model, reads) =
        erm_phase(ctx, &split.unlabeled, ctx.fresh_model(&cfg.hidden), &ctx.phase1_config())?;
    let retrain_set = train_set.subset(&split.labeled);
    let phase2_config = ctx.phase2_config();
    let (phase2, final_model) = retrain_phase(ctx, &feature_model, &retrain_set, Some(&ctx.bench.val), &phase2_config)?;
    let run = SeedRun {
        seed: ctx.seed,
        test: ctx.test_metrics(&final_model)?,
        phases: vec![phase1, phase2],
        phase1_group_label_reads: Some(reads),
        train_size: split.unlabeled.len(),
        retrain_size: Some(split.labeled.len()),
        notes: split.warnings.clone(),
    };
    Ok(TwoPhase {
        feature_model,
        retrain_set,
        retrain_rows: split.labeled,
        phase2_config,
        run,
        final_model,
    })
}

/// Classifier retraining on independent splits.
pub fn run_crois(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| Ok(crois_seed(ctx)?.run))
}

/// One seed of [`run_crois`] with its intermediate models.
pub fn crois_two_phase(bench: &Benchmark, cfg: &RecipeConfig, seed: u64) -> Result<TwoPhase> {
    cfg.validate()?;
    crois_seed(&Ctx {
        bench,
        cfg,
        seeds: Seeds::new(seed),
        seed,
    })
}

fn ncrt_seed(ctx: &Ctx<'_>) -> Result<TwoPhase> {
    let cfg = ctx.cfg;
    let train_set = &ctx.bench.train;
    let rows = all_rows(train_set);
    let (phase1, feature_model, reads) = erm_phase(ctx, &rows, ctx.fresh_model(&cfg.hidden), &ctx.phase1_config())?;
    // same draw as CROIS; every labeled row was also seen in phase 1
    let split = make_split(train_set, cfg.p, ctx.seeds.split, cfg.stratify)?;
    let retrain_set = train_set.subset(&split.labeled);
    let phase2_config = ctx.phase2_config();
    let (phase2, final_model) = retrain_phase(ctx, &feature_model, &retrain_set, Some(&ctx.bench.val), &phase2_config)?;
    let run = SeedRun {
        seed: ctx.seed,
        test: ctx.test_metrics(&final_model)?,
        phases: vec![phase1, phase2],
        phase1_group_label_reads: Some(reads),
        train_size: rows.len(),
        retrain_size: Some(split.labeled.len()),
        notes: split.warnings.clone(),
    };
    Ok(TwoPhase {
        feature_model,
        retrain_set,
        retrain_rows: split.labeled,
        phase2_config,
        run,
        final_model,
    })
}

/// Naive classifier retraining: the retraining rows were also used to train
/// the feature extractor.
pub fn run_ncrt(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| Ok(ncrt_seed(ctx)?.run))
}

/// One seed of [`run_ncrt`] with its intermediate models.
pub fn ncrt_two_phase(bench: &Benchmark, cfg: &RecipeConfig, seed: u64) -> Result<TwoPhase> {
    cfg.validate()?;
    ncrt_seed(&Ctx {
        bench,
        cfg,
        seeds: Seeds::new(seed),
        seed,
    })
}

/// Group labels only on validation: retrain on one half, select on the other.
pub fn run_crois_val_only(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| {
        let rows = all_rows(&bench.train);
        let (phase1, feature_model, reads) = erm_phase(ctx, &rows, ctx.fresh_model(&cfg.hidden), &ctx.phase1_config())?;
        let (retrain_rows, select_rows) = split_val_in_half(&all_rows(&bench.val), ctx.seeds.split)?;
        let retrain_set = bench.val.subset(&retrain_rows);
        let select_set = bench.val.subset(&select_rows);
        let (phase2, model) = retrain_phase(ctx, &feature_model, &retrain_set, Some(&select_set), &ctx.phase2_config())?;
        Ok(SeedRun {
            seed: ctx.seed,
            test: ctx.test_metrics(&model)?,
            phases: vec![phase1, phase2],
            phase1_group_label_reads: Some(reads),
            train_size: rows.len(),
            retrain_size: Some(retrain_rows.len()),
            notes: Vec::new(),
        })
    })
}

/// Retraining on a small fraction of validation with model selection on
/// training worst-group accuracy. The per-group batch quota is capped at the
/// largest power of two not above the smallest group.
pub fn run_crois_reduced_val(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| {
        let rows = all_rows(&bench.train);
        let (phase1, feature_model, reads) = erm_phase(ctx, &rows, ctx.fresh_model(&cfg.hidden), &ctx.phase1_config())?;
        let kept = sample_fraction(bench.val.len(), cfg.val_fraction, ctx.seeds.split)?;
        let retrain_set = bench.val.subset(&kept);
        require_groups(&retrain_set, "reduced validation set")?;
        let min_group = retrain_set.group_counts().into_iter().min().unwrap_or(0);
        let n_groups = retrain_set.n_groups();
        let mut config = ctx.phase2_config();
        let default_quota = (config.batch_size / n_groups).max(1);
        let quota = default_quota.min(floor_pow2(min_group)).max(1);
        config.batch_size = quota * n_groups;
        let notes = vec![format!(
            "smallest group {min_group}; batch quota {quota} (candidates {:?})",
            candidate_batch_quotas(min_group, default_quota)
        )];
        let (phase2, model) = retrain_phase(ctx, &feature_model, &retrain_set, None, &config)?;
        Ok(SeedRun {
            seed: ctx.seed,
            test: ctx.test_metrics(&model)?,
            phases: vec![phase1, phase2],
            phase1_group_label_reads: Some(reads),
            train_size: rows.len(),
            retrain_size: Some(kept.len()),
            notes,
        })
    })
}

/// Error-set baseline: a short ERM run labels each training row correct or
/// incorrect; GDRO then treats (label, correctness) as the groups. With a
/// head-only scope the short model's extractor is reused, otherwise a fresh
/// network of the recipe's width is trained.
pub fn run_jtt_lite(bench: &Benchmark, cfg: &RecipeConfig) -> Result<ExperimentResult> {
    run_seeds(bench, cfg, |ctx| {
        let over = cfg.jtt.as_ref().expect("validated");
        let hidden = over.hidden.clone().unwrap_or_else(|| cfg.hidden.clone());
        let short = TrainConfig {
            epochs: over.epochs,
            ..ctx.phase1_config()
        };
        let rows = all_rows(&bench.train);
        let unlabeled = bench.train.subset(&rows);
        let outcome = train(ctx.fresh_model(&hidden), &unlabeled, Some(&bench.val), &short, &ctx.options())?;
        let reads = unlabeled.group_reads();
        let short_model = outcome.final_model().clone();
        let phase1 = PhaseRun {
            name: "phase1".into(),
            criterion: None,
            selected_epoch: outcome.records.last().map(|r| r.epoch),
            records: outcome.records,
            rescale: None,
        };
        let pseudo = pseudo_group_dataset(&short_model, &unlabeled)?;
        let counts = pseudo.group_counts();
        let notes = vec![format!("pseudo-group sizes {counts:?}")];
        let initial = match cfg.retrain_scope {
            Scope::HeadOnly => short_model,
            Scope::Full => MlpModel::new(
                bench.train.input_dim(),
                &cfg.hidden,
                bench.train.n_classes(),
                derive_seed(ctx.seeds.init, &[stream_label("jtt")]),
            ),
        };
        let config = TrainConfig {
            objective: Objective::Gdro,
            ..ctx.phase2_config()
        };
        let (phase2, model) = fit(
            "phase2",
            initial,
            &pseudo,
            Some(&bench.val),
            &config,
            &ctx.options(),
            Criterion::ValWorstGroup,
        )?;
        Ok(SeedRun {
            seed: ctx.seed,
            test: ctx.test_metrics(&model)?,
            phases: vec![phase1, phase2],
            phase1_group_label_reads: Some(reads),
            train_size: rows.len(),
            retrain_size: Some(pseudo.len()),
            notes,
        })
    })
}

// ---------------------------------------------------------------------------
// Ablations

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub test_avg: Stat,
    pub test_wg: Stat,
    pub val_avg: Option<Stat>,
    pub val_wg: Option<Stat>,
}

fn stat(values: &[f64]) -> Stat {
    crate::metrics::mean_std(values).unwrap_or(Stat { mean: f64::NAN, std: None })
}

/// Phase 1 trained with each objective in turn on the unlabeled split (group
/// labels of that split are read for the robust objectives); phase 2 is the
/// same GDRO head retraining on the labeled split.
pub fn feature_extractor_ablation(bench: &Benchmark, cfg: &RecipeConfig, algorithms: &[Objective]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &algorithm in algorithms {
        let mut tests = Vec::new();
        for &seed in &cfg.seeds {
            let ctx = Ctx {
                bench,
                cfg,
                seeds: Seeds::new(seed),
                seed,
            };
            let split = make_split(&bench.train, cfg.p, ctx.seeds.split, cfg.stratify)?;
            let extractor_set = bench.train.subset(&split.unlabeled);
            let config = TrainConfig {
                objective: algorithm,
                ..ctx.phase1_config()
            };
            let (_, feature_model) = fit(
                "phase1",
                ctx.fresh_model(&cfg.hidden),
                &extractor_set,
                Some(&bench.val),
                &config,
                &ctx.options(),
                Criterion::ValAverage,
            )?;
            let retrain_set = bench.train.subset(&split.labeled);
            let phase2 = TrainConfig {
                objective: Objective::Gdro,
                scope: Scope::HeadOnly,
                ..ctx.phase2_config()
            };
            let (_, model) = fit(
                "phase2",
                feature_model,
                &retrain_set,
                Some(&bench.val),
                &phase2,
                &ctx.options(),
                Criterion::ValWorstGroup,
            )?;
            tests.push(ctx.test_metrics(&model)?);
        }
        let label = serde_json::to_value(algorithm)?.as_str().unwrap_or("?").to_string();
        rows.push(AblationRow {
            label,
            test_avg: stat(&tests.iter().map(|t| t.average_acc).collect::<Vec<_>>()),
            test_wg: stat(&tests.iter().map(|t| t.worst_group_acc).collect::<Vec<_>>()),
            val_avg: None,
            val_wg: None,
        });
    }
    Ok(rows)
}

/// For every listed phase-1 epoch, retrains the head of that checkpoint and
/// reports phase-1 validation average accuracy alongside phase-2 validation
/// and test accuracies.
pub fn epoch_ablation(bench: &Benchmark, cfg: &RecipeConfig, epochs: &[usize]) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if let Some(&e) = epochs.iter().find(|&&e| e > cfg.phase1.epochs) {
        return Err(Error::Range(format!(
            "epoch {e} is beyond the phase-1 length of {}",
            cfg.phase1.epochs
        )));
    }
    // phase-1 val avg, phase-2 val wg, test avg, test wg
    type Columns = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);
    let mut per_epoch: Vec<Columns> = vec![Default::default(); epochs.len()];
    for &seed in &cfg.seeds {
        let ctx = Ctx {
            bench,
            cfg,
            seeds: Seeds::new(seed),
            seed,
        };
        let split = make_split(&bench.train, cfg.p, ctx.seeds.split, cfg.stratify)?;
        let unlabeled = bench.train.subset(&split.unlabeled);
        let config = TrainConfig {
            keep_epochs: epochs.to_vec(),
            ..ctx.phase1_config()
        };
        let outcome = train(ctx.fresh_model(&cfg.hidden), &unlabeled, Some(&bench.val), &config, &ctx.options())?;
        let retrain_set = bench.train.subset(&split.labeled);
        for (slot, &e) in per_epoch.iter_mut().zip(epochs) {
            let extractor = outcome.checkpoints.get(e).ok_or(Error::MissingCheckpoint(e))?;
            let phase1_val = outcome
                .records
                .iter()
                .find(|r| r.epoch == e)
                .and_then(EpochRecord::val_avg_acc)
                .ok_or(Error::MissingCheckpoint(e))?;
            let (phase2, model) = retrain_phase(&ctx, extractor, &retrain_set, Some(&bench.val), &ctx.phase2_config())?;
            let val_wg = match (&phase2.rescale, phase2.selected_epoch) {
                (Some(r), _) => r.val_wg_acc,
                (None, Some(sel)) => phase2
                    .records
                    .iter()
                    .find(|r| r.epoch == sel)
                    .and_then(EpochRecord::val_wg_acc)
                    .unwrap_or(f64::NAN),
                _ => f64::NAN,
            };
            let test = ctx.test_metrics(&model)?;
            slot.0.push(phase1_val);
            slot.1.push(val_wg);
            slot.2.push(test.average_acc);
            slot.3.push(test.worst_group_acc);
        }
    }
    Ok(epochs
        .iter()
        .zip(per_epoch)
        .map(|(&e, (v_avg, v_wg, t_avg, t_wg))| AblationRow {
            label: e.to_string(),
            test_avg: stat(&t_avg),
            test_wg: stat(&t_wg),
            val_avg: Some(stat(&v_avg)),
            val_wg: Some(stat(&v_wg)),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Prediction changes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRow {
    /// `None` for the whole-split row.
    pub group: Option<usize>,
    pub size: usize,
    pub acc_before: f64,
    pub acc_after: f64,
    pub changed: usize,
    pub changed_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeBlock {
    pub split: String,
    pub rows: Vec<ChangeRow>,
    pub worst_group_before: Option<usize>,
    pub worst_group_after: Option<usize>,
}

/// Per split and group: accuracy before and after, and how many predictions
/// changed between the two models.
pub fn prediction_change_analysis(
    before: &MlpModel,
    after: &MlpModel,
    dataset: &GroupedDataset,
    splits: &[(&str, &[usize])],
) -> Result<Vec<ChangeBlock>> {
    if before.input_dim() != after.input_dim() || before.n_classes() != after.n_classes() {
        return Err(Error::Shape {
            context: "models compared for prediction changes",
            expected: before.input_dim(),
            actual: after.input_dim(),
        });
    }
    let pred_before = before.predict(dataset.features())?;
    let pred_after = after.predict(dataset.features())?;
    let groups = dataset.group_ids();
    let labels = dataset.labels();
    let n_groups = dataset.n_groups();
    let mut blocks = Vec::new();
    for &(name, rows) in splits {
        let mut size = vec![0usize; n_groups];
        let mut ok_before = vec![0usize; n_groups];
        let mut ok_after = vec![0usize; n_groups];
        let mut changed = vec![0usize; n_groups];
        for &i in rows {
            let g = groups[i];
            size[g] += 1;
            ok_before[g] += usize::from(pred_before[i] == labels[i]);
            ok_after[g] += usize::from(pred_after[i] == labels[i]);
            changed[g] += usize::from(pred_before[i] != pred_after[i]);
        }
        let row = |group: Option<usize>, s: usize, b: usize, a: usize, c: usize| {
            let d = s.max(1) as f64;
            ChangeRow {
                group,
                size: s,
                acc_before: b as f64 / d,
                acc_after: a as f64 / d,
                changed: c,
                changed_pct: 100.0 * c as f64 / d,
            }
        };
        let mut out: Vec<ChangeRow> = (0..n_groups)
            .map(|g| row(Some(g), size[g], ok_before[g], ok_after[g], changed[g]))
            .collect();
        out.push(row(
            None,
            size.iter().sum(),
            ok_before.iter().sum(),
            ok_after.iter().sum(),
            changed.iter().sum(),
        ));
        let worst = |acc: &dyn Fn(&ChangeRow) -> f64| {
            let mut w: Option<usize> = None;
            for r in out.iter().filter(|r| r.size > 0) {
                let Some(g) = r.group else { continue };
                if w.is_none_or(|wg| acc(r) < acc(&out[wg])) {
                    w = Some(g);
                }
            }
            w
        };
        let worst_group_before = worst(&|r| r.acc_before);
        let worst_group_after = worst(&|r| r.acc_after);
        blocks.push(ChangeBlock {
            split: name.to_string(),
            rows: out,
            worst_group_before,
            worst_group_after,
        });
    }
    Ok(blocks)
}

/// Writes the penultimate features of `model` on `dataset` in the embedding
/// CSV layout, for projection with external tools.
pub fn export_features(model: &MlpModel, dataset: &GroupedDataset, path: &std::path::Path) -> Result<()> {
    let features = model.features(dataset.features())?;
    let d = GroupedDataset::new(
        dataset.name.clone(),
        features,
        dataset.labels().to_vec(),
        dataset.attributes().to_vec(),
        dataset.n_classes(),
        dataset.n_attributes(),
    )?;
    save_embedding_csv(&d, path)
}
