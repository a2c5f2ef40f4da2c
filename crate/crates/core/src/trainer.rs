//! Epoch-based training (ERM, reweighting, subsampling, GDRO; full network or
//! head only), checkpoint retention and model selection.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{shuffled_batches, subsample_to_minority, GroupBalancedSampler, GroupedDataset};
use crate::diffnet::{cross_entropy_rows, sgd_step, Gradients, MlpModel, Scope, SgdParams, Tape};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_predictions, GroupMetrics, Weighting};
use crate::objectives::{gdro_weighted_loss, group_losses, group_means, reweight_weights, GdroState};
use crate::seed::{derive_seed, rng_for, stream_label};

static TRAIN_INVOCATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of [`train`] calls made by this process.
pub fn train_invocations() -> usize {
    TRAIN_INVOCATIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Erm,
    Gdro,
    Reweight,
    Subsample,
}

impl Objective {
    pub fn needs_groups(self) -> bool {
        self != Objective::Erm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Group-balanced for GDRO, shuffled otherwise.
    #[default]
    Auto,
    Shuffled,
    Balanced,
}

/// Hyperparameters of one training phase.
///
/// Defaults: `lr = 1e-4`, `l2 = 1e-4`, momentum 0.9, batch 32, 250 epochs,
/// GDRO step 0.01 and no group adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: Objective,
    pub scope: Scope,
    pub eta_q: f64,
    pub group_adjustment: f64,
    pub seed: u64,
    pub eval_every: usize,
    pub sampling: Sampling,
    /// Epochs whose checkpoints are always retained.
    pub keep_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            momentum: 0.9,
            l2: 1e-4,
            epochs: 250,
            batch_size: 32,
            objective: Objective::Erm,
            scope: Scope::Full,
            eta_q: 0.01,
            group_adjustment: 0.0,
            seed: 0,
            eval_every: 1,
            sampling: Sampling::Auto,
            keep_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.l2 >= 0.0) {
            return bad(format!("l2 must be >= 0, got {}", self.l2));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(self.eta_q >= 0.0) {
            return bad(format!("eta_q must be >= 0, got {}", self.eta_q));
        }
        if !(self.group_adjustment >= 0.0) {
            return bad(format!("group_adjustment must be >= 0, got {}", self.group_adjustment));
        }
        Ok(())
    }

    pub fn sgd(&self) -> SgdParams {
        SgdParams {
            lr: self.lr,
            momentum: self.momentum,
            l2: self.l2,
        }
    }

    fn balanced(&self) -> bool {
        match self.sampling {
            Sampling::Auto => self.objective == Objective::Gdro,
            Sampling::Shuffled => false,
            Sampling::Balanced => true,
        }
    }
}

/// Loss and accuracy of one split, with a per-group breakdown when the
/// split's group labels may be read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub loss: f64,
    pub acc: f64,
    pub groups: Option<GroupBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBreakdown {
    pub loss: Vec<Option<f64>>,
    pub metrics: GroupMetrics,
}

impl SplitEval {
    pub fn worst_group_acc(&self) -> Option<f64> {
        self.groups.as_ref().map(|g| g.metrics.worst_group_acc)
    }

    pub fn average_acc(&self) -> f64 {
        self.groups.as_ref().map_or(self.acc, |g| g.metrics.average_acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the model before any update.
    pub epoch: usize,
    pub train: SplitEval,
    pub val: Option<SplitEval>,
    /// GDRO weights at the end of the epoch.
    pub q: Option<Vec<f64>>,
    /// Batches since the previous record that repeated a row.
    pub duplicate_batches: usize,
}

impl EpochRecord {
    pub fn val_avg_acc(&self) -> Option<f64> {
        self.val.as_ref().map(SplitEval::average_acc)
    }

    pub fn val_wg_acc(&self) -> Option<f64> {
        self.val.as_ref().and_then(SplitEval::worst_group_acc)
    }

    pub fn train_wg_acc(&self) -> Option<f64> {
        self.train.worst_group_acc()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    ValAverage,
    ValWorstGroup,
    TrainWorstGroup,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::ValAverage, Criterion::ValWorstGroup, Criterion::TrainWorstGroup];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::ValAverage => "val_average_accuracy",
            Criterion::ValWorstGroup => "val_worst_group_accuracy",
            Criterion::TrainWorstGroup => "train_worst_group_accuracy",
        }
    }

    pub fn value(self, record: &EpochRecord) -> Option<f64> {
        match self {
            Criterion::ValAverage => record.val_avg_acc(),
            Criterion::ValWorstGroup => record.val_wg_acc(),
            Criterion::TrainWorstGroup => record.train_wg_acc(),
        }
        .filter(|v| v.is_finite())
    }
}

/// Retains the best-so-far model under every criterion, any explicitly kept
/// epochs, and the final model.
#[derive(Debug, Clone, Default)]
pub struct CheckpointStore {
    models: BTreeMap<usize, MlpModel>,
    best: BTreeMap<Criterion, (usize, f64)>,
    keep: BTreeSet<usize>,
    last: Option<usize>,
}

impl CheckpointStore {
    pub fn new(keep: impl IntoIterator<Item = usize>) -> Self {
        Self {
            keep: keep.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Offers the model evaluated in `record`; stores it if it is needed.
    pub fn offer(&mut self, record: &EpochRecord, model: &MlpModel, is_final: bool) {
        let mut needed = is_final || self.keep.contains(&record.epoch);
        for c in Criterion::ALL {
            if let Some(v) = c.value(record) {
                if self.best.get(&c).is_none_or(|&(_, b)| v > b) {
                    self.best.insert(c, (record.epoch, v));
                    needed = true;
                }
            }
        }
        if is_final {
            self.last = Some(record.epoch);
        }
        if needed {
            self.models.insert(record.epoch, model.clone());
        }
        let live: BTreeSet<usize> = self
            .best
            .values()
            .map(|&(e, _)| e)
            .chain(self.keep.iter().copied())
            .chain(self.last)
            .collect();
        self.models.retain(|e, _| live.contains(e));
    }

    /// Inserts a checkpoint unconditionally.
    pub fn insert(&mut self, epoch: usize, model: MlpModel) {
        self.keep.insert(epoch);
        self.models.insert(epoch, model);
    }

    pub fn get(&self, epoch: usize) -> Option<&MlpModel> {
        self.models.get(&epoch)
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.models.keys().copied().collect()
    }

    pub fn final_model(&self) -> Option<&MlpModel> {
        self.last.and_then(|e| self.models.get(&e))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub checkpoints: CheckpointStore,
}

impl TrainOutcome {
    pub fn final_model(&self) -> &MlpModel {
        self.checkpoints.final_model().expect("final checkpoint is always retained")
    }
}

/// Epoch whose record maximizes `criterion`; ties go to the earliest epoch.
pub fn best_epoch(records: &[EpochRecord], criterion: Criterion) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in records {
        if let Some(v) = criterion.value(r) {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((r.epoch, v));
            }
        }
    }
    best.map(|(e, _)| e)
}

pub fn select<'a>(
    records: &[EpochRecord],
    checkpoints: &'a CheckpointStore,
    criterion: Criterion,
) -> Result<(usize, &'a MlpModel)> {
    let epoch = best_epoch(records, criterion).ok_or(Error::MissingCriterion(criterion.name()))?;
    let model = checkpoints.get(epoch).ok_or(Error::MissingCheckpoint(epoch))?;
    Ok((epoch, model))
}

/// Highest validation average accuracy.
pub fn select_by_avg_val<'a>(records: &[EpochRecord], checkpoints: &'a CheckpointStore) -> Result<(usize, &'a MlpModel)> {
    select(records, checkpoints, Criterion::ValAverage)
}

/// Highest validation worst-group accuracy.
pub fn select_by_wg_val<'a>(records: &[EpochRecord], checkpoints: &'a CheckpointStore) -> Result<(usize, &'a MlpModel)> {
    select(records, checkpoints, Criterion::ValWorstGroup)
}

/// Highest training worst-group accuracy.
pub fn select_by_train_wg<'a>(records: &[EpochRecord], checkpoints: &'a CheckpointStore) -> Result<(usize, &'a MlpModel)> {
    select(records, checkpoints, Criterion::TrainWorstGroup)
}

/// Evaluation of a split from its logits.
fn split_eval(
    logits: &Array2<f64>,
    labels: &[usize],
    groups: Option<(&[usize], usize)>,
    weighting: &Weighting,
) -> Result<SplitEval> {
    let (ce, _) = cross_entropy_rows(logits, labels);
    let predictions = crate::diffnet::argmax_rows(logits);
    let n = labels.len().max(1) as f64;
    let loss = ce.iter().sum::<f64>() / n;
    let acc = predictions.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / n;
    let groups = match groups {
        None => None,
        Some((ids, n_groups)) => Some(GroupBreakdown {
            loss: group_means(&ce, ids, n_groups).losses,
            metrics: evaluate_predictions(&predictions, labels, ids, n_groups, weighting)?,
        }),
    };
    Ok(SplitEval { loss, acc, groups })
}

/// Training options that are not hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Weighting of the validation average accuracy.
    pub val_weighting: Weighting,
    /// Read training group labels for per-group training metrics even under
    /// ERM. Off by default so ERM phases never touch group labels.
    pub train_group_metrics: bool,
}

/// The model being optimized: either the whole network on raw inputs, or the
/// head alone on frozen features computed once up front.
struct Trainable {
    model: MlpModel,
    inputs: Array2<f64>,
    head_only: bool,
}

impl Trainable {
    fn full_model(&self, original: &MlpModel) -> MlpModel {
        if self.head_only {
            let mut m = original.clone();
            *m.head_mut() = self.model.head().clone();
            m
        } else {
            self.model.clone()
        }
    }
}

/// Trains `model` on every row of `train`, evaluating on `val` at epoch 0,
/// every `eval_every` epochs and at the last epoch.
pub fn train(
    model: MlpModel,
    train: &GroupedDataset,
    val: Option<&GroupedDataset>,
    config: &TrainConfig,
    options: &TrainOptions,
) -> Result<TrainOutcome> {
    TRAIN_INVOCATIONS.fetch_add(1, Ordering::Relaxed);
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if model.input_dim() != train.input_dim() {
        return Err(Error::Shape {
            context: "model input vs training features",
            expected: model.input_dim(),
            actual: train.input_dim(),
        });
    }

    let needs_groups = config.objective.needs_groups() || config.balanced();
    let read_groups = needs_groups || options.train_group_metrics;
    let n_groups = train.n_groups();
    let all_groups: Option<Vec<usize>> = read_groups.then(|| train.group_ids());

    // Subsampling happens once per run.
    let (rows, groups): (Vec<usize>, Option<Vec<usize>>) = if config.objective == Objective::Subsample {
        let keep = subsample_to_minority(train, derive_seed(config.seed, &[stream_label("subsample")]))?;
        let g = all_groups.as_ref().map(|g| keep.iter().map(|&i| g[i]).collect());
        (keep, g)
    } else {
        ((0..train.len()).collect(), all_groups.clone())
    };

    let group_sizes: Option<Vec<usize>> = groups.as_ref().map(|g| {
        let mut c = vec![0usize; n_groups];
        for &gi in g {
            c[gi] += 1;
        }
        c
    });
    let mut gdro = match config.objective {
        Objective::Gdro => Some(GdroState::new(
            config.eta_q,
            config.group_adjustment,
            group_sizes.clone().expect("gdro reads groups"),
        )?),
        _ => None,
    };

    let head_only = config.scope == Scope::HeadOnly;
    let train_x = train.features().select(Axis(0), &rows);
    let mut trainable = if head_only {
        let features = model.features(train_x.view())?;
        let head = MlpModel::from_layers(vec![model.head().clone()], model.seed())?;
        Trainable {
            model: head,
            inputs: features,
            head_only,
        }
    } else {
        Trainable {
            model: model.clone(),
            inputs: train_x,
            head_only,
        }
    };
    let labels: Vec<usize> = rows.iter().map(|&i| train.labels()[i]).collect();
    let n = rows.len();

    let mut sampler = if config.balanced() {
        let mut members = vec![Vec::new(); n_groups];
        for (pos, &g) in groups.as_ref().expect("balanced reads groups").iter().enumerate() {
            members[g].push(pos);
        }
        Some(GroupBalancedSampler::new(
            members,
            config.batch_size,
            derive_seed(config.seed, &[stream_label("balanced")]),
        )?)
    } else {
        None
    };
    let mut shuffle_rng = rng_for(config.seed, "shuffle");
    let batches_per_epoch = n.div_ceil(config.batch_size);

    let val_groups = val.map(|v| (v.group_ids(), v.n_groups()));
    let eval = |t: &Trainable, epoch: usize, q: Option<Vec<f64>>, dups: usize| -> Result<EpochRecord> {
        let train_logits = t.model.logits(t.inputs.view())?;
        let train_eval = split_eval(
            &train_logits,
            &labels,
            groups.as_deref().map(|g| (g, n_groups)),
            &Weighting::Plain,
        )?;
        let val_eval = match (val, &val_groups) {
            (Some(v), Some((vg, vn))) => {
                let m = t.full_model(&model);
                let logits = m.logits(v.features())?;
                Some(split_eval(&logits, v.labels(), Some((vg, *vn)), &options.val_weighting)?)
            }
            _ => None,
        };
        Ok(EpochRecord {
            epoch,
            train: train_eval,
            val: val_eval,
            q,
            duplicate_batches: dups,
        })
    };

    let mut store = CheckpointStore::new(config.keep_epochs.iter().copied());
    let mut records = Vec::new();
    let first = eval(&trainable, 0, gdro.as_ref().map(|s| s.q.clone()), 0)?;
    store.offer(&first, &trainable.full_model(&model), config.epochs == 0);
    records.push(first);

    let sgd = config.sgd();
    let mut velocity = Gradients::zeros_like(&trainable.model);
    let mut duplicates = 0usize;
    for epoch in 1..=config.epochs {
        let epoch_batches: Vec<(Vec<usize>, Option<Vec<usize>>)> = match sampler.as_mut() {
            Some(s) => (0..batches_per_epoch)
                .map(|_| {
                    let b = s.next_batch();
                    duplicates += usize::from(b.has_duplicates);
                    (b.indices, Some(b.groups))
                })
                .collect(),
            None => shuffled_batches(n, config.batch_size, &mut shuffle_rng)
                .into_iter()
                .map(|idx| {
                    let g = groups.as_ref().map(|g| idx.iter().map(|&i| g[i]).collect());
                    (idx, g)
                })
                .collect(),
        };

        for (idx, batch_groups) in epoch_batches {
            let x = trainable.inputs.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let tape = Tape::record(&trainable.model, x.view())?;
            let (weights, denominator) = match config.objective {
                Objective::Gdro => {
                    let state = gdro.as_mut().expect("gdro state");
                    let bg = batch_groups.as_deref().expect("gdro batch groups");
                    let report = group_losses(tape.logits(), &y, bg, n_groups);
                    let adjusted = state.adjust(&report)?;
                    state.update(&adjusted)?;
                    (gdro_weighted_loss(state, &report, &adjusted, bg).example_weights, 1.0)
                }
                Objective::Reweight => {
                    let bg = batch_groups.as_deref().expect("reweight batch groups");
                    let w = reweight_weights(bg, group_sizes.as_deref().expect("sizes"))?;
                    let total = w.iter().sum();
                    (w, total)
                }
                Objective::Erm | Objective::Subsample => (vec![1.0; y.len()], y.len() as f64),
            };
            let (_, grads) = tape.backward(&trainable.model, &y, &weights, denominator)?;
            sgd_step(&mut trainable.model, &grads, &sgd, &mut velocity, Scope::Full);
        }
        if !trainable.model.is_finite() {
            return Err(Error::Range(format!("parameters became non-finite at epoch {epoch}")));
        }

        let last = epoch == config.epochs;
        if epoch % config.eval_every == 0 || last || config.keep_epochs.contains(&epoch) {
            let record = eval(&trainable, epoch, gdro.as_ref().map(|s| s.q.clone()), duplicates)?;
            duplicates = 0;
            store.offer(&record, &trainable.full_model(&model), last);
            records.push(record);
        }
    }

    Ok(TrainOutcome {
        records,
        checkpoints: store,
    })
}

/// Long-format learning curves: `epoch,split,group,loss,acc`. `phase`
/// prefixes the split name (`phase2/val`). Group `all` is the whole split.
pub fn write_curves_csv<W: Write>(records: &[EpochRecord], phase: &str, header: bool, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(["epoch", "split", "group", "loss", "acc"])?;
    }
    for r in records {
        for (name, split) in [("train", Some(&r.train)), ("val", r.val.as_ref())] {
            let Some(split) = split else { continue };
            let tag = if phase.is_empty() {
                name.to_string()
            } else {
                format!("{phase}/{name}")
            };
            w.write_record([r.epoch.to_string(), tag.clone(), "all".into(), split.loss.to_string(), split.acc.to_string()])?;
            if let Some(g) = &split.groups {
                for (gi, (loss, acc)) in g.loss.iter().zip(&g.metrics.per_group_acc).enumerate() {
                    if let (Some(loss), Some(acc)) = (loss, acc) {
                        w.write_record([r.epoch.to_string(), tag.clone(), gi.to_string(), loss.to_string(), acc.to_string()])?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Summary curve `epoch,train_wg,val_avg,val_wg`: one row per epoch of the
/// first stream, each column the mean over the streams that report it.
pub fn write_summary_csv<W: Write>(streams: &[&[EpochRecord]], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_wg", "val_avg", "val_wg"])?;
    let Some(first) = streams.first() else {
        w.flush()?;
        return Ok(());
    };
    let mean = |epoch: usize, f: &dyn Fn(&EpochRecord) -> Option<f64>| {
        let v: Vec<f64> = streams
            .iter()
            .filter_map(|s| s.iter().find(|r| r.epoch == epoch).and_then(f))
            .collect();
        if v.is_empty() {
            String::new()
        } else {
            (v.iter().sum::<f64>() / v.len() as f64).to_string()
        }
    };
    for r in first.iter() {
        w.write_record([
            r.epoch.to_string(),
            mean(r.epoch, &EpochRecord::train_wg_acc),
            mean(r.epoch, &EpochRecord::val_avg_acc),
            mean(r.epoch, &EpochRecord::val_wg_acc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::WeightingTag;

    fn record(epoch: usize, val_avg: f64, val_wg: f64, train_wg: f64) -> EpochRecord {
        let metrics = |avg: f64, wg: f64| GroupMetrics {
            per_group_acc: vec![Some(wg), Some(avg)],
            counts: vec![1, 1],
            worst_group_acc: wg,
            average_acc: avg,
            weighting: WeightingTag::Plain,
        };
        let split = |avg: f64, wg: f64| SplitEval {
            loss: 0.0,
            acc: avg,
            groups: Some(GroupBreakdown {
                loss: vec![Some(0.0); 2],
                metrics: metrics(avg, wg),
            }),
        };
        EpochRecord {
            epoch,
            train: split(1.0, train_wg),
            val: Some(split(val_avg, val_wg)),
            q: None,
            duplicate_batches: 0,
        }
    }

    fn store_for(records: &[EpochRecord]) -> CheckpointStore {
        let mut s = CheckpointStore::default();
        for r in records {
            s.insert(r.epoch, MlpModel::new(1, &[], 2, r.epoch as u64));
        }
        s
    }

    #[test]
    fn single_record_selects_itself() {
        let rs = vec![record(0, 0.5, 0.2, 0.3)];
        let s = store_for(&rs);
        assert_eq!(select_by_avg_val(&rs, &s).unwrap().0, 0);
        assert_eq!(select_by_wg_val(&rs, &s).unwrap().0, 0);
        assert_eq!(select_by_train_wg(&rs, &s).unwrap().0, 0);
    }

    #[test]
    fn increasing_and_interior_peak() {
        let rs: Vec<EpochRecord> = (1..=4).map(|e| record(e, 0.1 * e as f64, 0.0, 0.0)).collect();
        assert_eq!(select_by_avg_val(&rs, &store_for(&rs)).unwrap().0, 4);
        let peak = vec![record(1, 0.5, 0.0, 0.0), record(2, 0.9, 0.0, 0.0), record(3, 0.6, 0.0, 0.0)];
        assert_eq!(select_by_avg_val(&peak, &store_for(&peak)).unwrap().0, 2);
    }

    #[test]
    fn wg_selection_and_ties() {
        let rs = vec![record(1, 0.9, 0.2, 0.9), record(2, 0.8, 0.9, 0.5), record(3, 0.7, 0.5, 0.2)];
        let s = store_for(&rs);
        assert_eq!(select_by_wg_val(&rs, &s).unwrap().0, 2);
        assert_eq!(select_by_train_wg(&rs, &s).unwrap().0, 1);
        let flat = vec![record(1, 0.5, 0.5, 0.5), record(2, 0.5, 0.5, 0.5), record(3, 0.5, 0.5, 0.5)];
        let s = store_for(&flat);
        assert_eq!(select_by_wg_val(&flat, &s).unwrap().0, 1);
        assert_eq!(select_by_train_wg(&flat, &s).unwrap().0, 1);
    }

    #[test]
    fn store_keeps_only_needed_checkpoints() {
        let mut s = CheckpointStore::new([2]);
        let m = MlpModel::new(1, &[], 2, 0);
        let rs = [
            record(0, 0.5, 0.5, 0.5),
            record(1, 0.9, 0.1, 0.1),
            record(2, 0.1, 0.1, 0.1),
            record(3, 0.1, 0.2, 0.1),
            record(4, 0.1, 0.1, 0.1),
        ];
        for (i, r) in rs.iter().enumerate() {
            s.offer(r, &m, i == rs.len() - 1);
        }
        // best avg at 1, best val wg and train wg at 0, kept 2, final 4
        assert_eq!(s.epochs(), vec![0, 1, 2, 4]);
        assert!(select_by_avg_val(&rs, &s).is_ok());
    }

    #[test]
    fn missing_criterion_is_an_error() {
        let mut r = record(0, 0.5, 0.5, 0.5);
        r.val = None;
        let s = store_for(std::slice::from_ref(&r));
        assert!(matches!(select_by_wg_val(&[r], &s), Err(Error::MissingCriterion(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { momentum: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
