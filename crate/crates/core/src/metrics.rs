//! Group-wise evaluation and aggregation across seeds.

use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::diffnet::MlpModel;
use crate::error::{Error, Result};

/// How the average accuracy of an evaluation split is formed.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Weighting {
    /// Fraction of correct predictions over all rows.
    #[default]
    Plain,
    /// `sum_g pi_g acc_g` with training-distribution group proportions.
    TrainWeighted(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingTag {
    Plain,
    TrainWeighted,
}

impl Weighting {
    pub fn tag(&self) -> WeightingTag {
        match self {
            Weighting::Plain => WeightingTag::Plain,
            Weighting::TrainWeighted(_) => WeightingTag::TrainWeighted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// `None` for groups absent from the split.
    pub per_group_acc: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    pub worst_group_acc: f64,
    pub average_acc: f64,
    pub weighting: WeightingTag,
}

impl GroupMetrics {
    pub fn worst_group(&self) -> Option<usize> {
        let mut worst: Option<usize> = None;
        for (g, acc) in self.per_group_acc.iter().enumerate() {
            if let Some(a) = acc {
                if worst.is_none_or(|w| *a < self.per_group_acc[w].unwrap_or(f64::INFINITY)) {
                    worst = Some(g);
                }
            }
        }
        worst
    }
}

/// Metrics from predictions. Groups without examples are left out of the
/// worst-group minimum (with a warning).
pub fn evaluate_predictions(
    predictions: &[usize],
    labels: &[usize],
    groups: &[usize],
    n_groups: usize,
    weighting: &Weighting,
) -> Result<GroupMetrics> {
    if predictions.is_empty() {
        return Err(Error::InsufficientData("cannot evaluate an empty split".into()));
    }
    let mut correct = vec![0usize; n_groups];
    let mut counts = vec![0usize; n_groups];
    for ((&p, &y), &g) in predictions.iter().zip(labels).zip(groups) {
        counts[g] += 1;
        correct[g] += usize::from(p == y);
    }
    let per_group_acc: Vec<Option<f64>> = correct
        .iter()
        .zip(&counts)
        .map(|(&c, &n)| (n > 0).then(|| c as f64 / n as f64))
        .collect();
    for (g, &n) in counts.iter().enumerate() {
        if n == 0 {
            log::warn!("group {g} has no examples in this split; excluded from worst-group accuracy");
        }
    }
    let worst_group_acc = per_group_acc.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let average_acc = match weighting {
        Weighting::Plain => correct.iter().sum::<usize>() as f64 / predictions.len() as f64,
        Weighting::TrainWeighted(pi) => {
            if pi.len() != n_groups {
                return Err(Error::Shape {
                    context: "train group proportions",
                    expected: n_groups,
                    actual: pi.len(),
                });
            }
            if pi.iter().any(|&p| p < 0.0) || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Range("train group proportions must lie on the simplex".into()));
            }
            // renormalize over the groups present in this split
            let (num, den) = per_group_acc
                .iter()
                .zip(pi)
                .filter_map(|(a, &p)| a.map(|a| (p * a, p)))
                .fold((0.0, 0.0), |(n, d), (pa, p)| (n + pa, d + p));
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        }
    };
    Ok(GroupMetrics {
        per_group_acc,
        counts,
        worst_group_acc,
        average_acc,
        weighting: weighting.tag(),
    })
}

pub fn evaluate(model: &MlpModel, dataset: &GroupedDataset, weighting: &Weighting) -> Result<GroupMetrics> {
    let predictions = model.predict(dataset.features())?;
    evaluate_predictions(
        &predictions,
        dataset.labels(),
        &dataset.group_ids(),
        dataset.n_groups(),
        weighting,
    )
}

/// Group proportions of a dataset (reads its group labels).
pub fn group_proportions(dataset: &GroupedDataset) -> Vec<f64> {
    let n = dataset.len().max(1) as f64;
    dataset.group_counts().iter().map(|&c| c as f64 / n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; present only with two or more values.
    pub std: Option<f64>,
}

pub fn mean_std(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    Some(Stat { mean, std })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub average_acc: Stat,
    pub worst_group_acc: Stat,
    /// Over the runs where the group was present.
    pub per_group_acc: Vec<Option<Stat>>,
}

pub fn aggregate_seeds(results: &[GroupMetrics]) -> Result<MetricSummary> {
    let first = results
        .first()
        .ok_or_else(|| Error::InsufficientData("aggregate_seeds needs at least one result".into()))?;
    let column = |f: &dyn Fn(&GroupMetrics) -> f64| -> Vec<f64> { results.iter().map(f).collect() };
    let n_groups = first.per_group_acc.len();
    let per_group_acc = (0..n_groups)
        .map(|g| {
            let v: Vec<f64> = results.iter().filter_map(|r| r.per_group_acc.get(g).copied().flatten()).collect();
            mean_std(&v)
        })
        .collect();
    Ok(MetricSummary {
        runs: results.len(),
        average_acc: mean_std(&column(&|r| r.average_acc)).expect("nonempty"),
        worst_group_acc: mean_std(&column(&|r| r.worst_group_acc)).expect("nonempty"),
        per_group_acc,
    })
}
