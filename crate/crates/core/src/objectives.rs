//! Group-level loss assembly: per-group cross-entropy, group adjustment, the
//! GDRO weight update, importance reweighting and error-set pseudo-labels.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::diffnet::{cross_entropy_rows, MlpModel};
use crate::error::{Error, Result};

/// Mean cross-entropy of each group present in a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupLossReport {
    /// `None` for groups with no example in the batch.
    pub losses: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl GroupLossReport {
    pub fn n_groups(&self) -> usize {
        self.counts.len()
    }
}

pub fn group_losses(logits: &Array2<f64>, labels: &[usize], groups: &[usize], n_groups: usize) -> GroupLossReport {
    let (per_example, _) = cross_entropy_rows(logits, labels);
    group_means(&per_example, groups, n_groups)
}

pub(crate) fn group_means(values: &[f64], groups: &[usize], n_groups: usize) -> GroupLossReport {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1;
    }
    let losses = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    GroupLossReport { losses, counts }
}

/// `loss_g + C / sqrt(n_g)` for every group present in the report.
pub fn adjust_losses(report: &GroupLossReport, adjustment: f64, group_sizes: &[usize]) -> Result<Vec<Option<f64>>> {
    if adjustment < 0.0 {
        return Err(Error::Range(format!("group adjustment must be >= 0, got {adjustment}")));
    }
    if let Some(g) = group_sizes.iter().position(|&n| n == 0) {
        return Err(Error::EmptyGroup {
            group: g,
            context: "group adjustment needs n_g >= 1".into(),
        });
    }
    Ok(report
        .losses
        .iter()
        .zip(group_sizes)
        .map(|(l, &n)| l.map(|l| l + adjustment / (n as f64).sqrt()))
        .collect())
}

/// Adversarial group weights of GDRO and the constants of the update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdroState {
    /// Point on the probability simplex.
    pub q: Vec<f64>,
    pub step_size: f64,
    pub adjustment: f64,
    /// Training examples per group.
    pub group_sizes: Vec<usize>,
}

impl GdroState {
    /// Uniform weights over `group_sizes.len()` groups.
    pub fn new(step_size: f64, adjustment: f64, group_sizes: Vec<usize>) -> Result<Self> {
        if !(step_size >= 0.0) || !step_size.is_finite() {
            return Err(Error::Range(format!("GDRO step size must be >= 0, got {step_size}")));
        }
        if let Some(g) = group_sizes.iter().position(|&n| n == 0) {
            return Err(Error::EmptyGroup {
                group: g,
                context: "GDRO needs every group in the training data".into(),
            });
        }
        let n = group_sizes.len();
        Ok(Self {
            q: vec![1.0 / n as f64; n],
            step_size,
            adjustment,
            group_sizes,
        })
    }

    pub fn adjust(&self, report: &GroupLossReport) -> Result<Vec<Option<f64>>> {
        adjust_losses(report, self.adjustment, &self.group_sizes)
    }

    /// Exponentiated-gradient ascent step:
    /// `q_g <- q_g exp(eta loss_g)` for observed groups, then renormalize.
    /// Groups absent from the batch keep their mass up to renormalization.
    pub fn update(&mut self, losses: &[Option<f64>]) -> Result<()> {
        debug_assert_eq!(losses.len(), self.q.len());
        let eta = self.step_size;
        let mut shift = 0.0f64;
        for l in losses.iter().flatten() {
            if !l.is_finite() {
                return Err(Error::Range(format!("non-finite group loss {l}")));
            }
            shift = shift.max(eta * l);
        }
        for (q, l) in self.q.iter_mut().zip(losses) {
            let exponent = l.map_or(0.0, |l| eta * l) - shift;
            *q *= exponent.exp();
        }
        let total: f64 = self.q.iter().sum();
        for q in &mut self.q {
            *q /= total;
        }
        Ok(())
    }
}

/// Free-function form of [`GdroState::update`].
pub fn gdro_update_q(state: &GdroState, losses: &[Option<f64>]) -> Result<GdroState> {
    let mut next = state.clone();
    next.update(losses)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    /// `sum_g q_g adjusted_g` over groups present in the batch.
    pub total: f64,
    /// `q_g / count_g` for each example of group `g`. With a denominator of
    /// 1 these weights give the gradient of `total`.
    pub example_weights: Vec<f64>,
}

pub fn gdro_weighted_loss(
    state: &GdroState,
    report: &GroupLossReport,
    adjusted: &[Option<f64>],
    example_groups: &[usize],
) -> WeightedLoss {
    let total = state
        .q
        .iter()
        .zip(adjusted)
        .filter_map(|(q, l)| l.map(|l| q * l))
        .sum();
    let example_weights = example_groups
        .iter()
        .map(|&g| state.q[g] / report.counts[g] as f64)
        .collect();
    WeightedLoss { total, example_weights }
}

/// Importance weights `1 / n_g`, scaled to mean 1 over the given examples.
pub fn reweight_weights(example_groups: &[usize], group_sizes: &[usize]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = example_groups
        .iter()
        .map(|&g| match group_sizes.get(g) {
            Some(&n) if n > 0 => Ok(1.0 / n as f64),
            _ => Err(Error::EmptyGroup {
                group: g,
                context: "reweighting needs n_g >= 1 for every present group".into(),
            }),
        })
        .collect::<Result<_>>()?;
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    Ok(raw.into_iter().map(|w| w / mean).collect())
}

pub const PSEUDO_CORRECT: usize = 0;
pub const PSEUDO_INCORRECT: usize = 1;

/// [`PSEUDO_CORRECT`] or [`PSEUDO_INCORRECT`] per example, by whether `model`
/// classifies it correctly. Reads class labels only.
pub fn error_set_pseudolabels(model: &MlpModel, dataset: &GroupedDataset) -> Result<Vec<usize>> {
    let predictions = model.predict(dataset.features())?;
    Ok(predictions
        .iter()
        .zip(dataset.labels())
        .map(|(&p, &y)| if p == y { PSEUDO_CORRECT } else { PSEUDO_INCORRECT })
        .collect())
}

/// The dataset with its attribute column replaced by error-set pseudo-labels,
/// giving `2k` pseudo-groups.
pub fn pseudo_group_dataset(model: &MlpModel, dataset: &GroupedDataset) -> Result<GroupedDataset> {
    let pseudo = error_set_pseudolabels(model, dataset)?;
    dataset.with_attributes(pseudo, 2)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_group(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}
