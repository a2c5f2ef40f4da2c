//! Grouped datasets, the synthetic spurious-correlation generator, embedding
//! CSV ingestion, independent splits and group-aware batching.
//!
//! A group is the pair (class label, attribute), encoded as `y * m + a` where
//! `m` is the number of attribute values.
//!
//! Reads of group-level information (attributes, group ids, group counts) go
//! through a counting accessor. Phases that must not use group labels can be
//! audited by checking [`GroupedDataset::group_reads`] before and after.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug)]
pub struct GroupedDataset {
    pub name: String,
    features: Array2<f64>,
    labels: Vec<usize>,
    attributes: Vec<usize>,
    n_classes: usize,
    n_attributes: usize,
    group_reads: AtomicUsize,
}

impl Clone for GroupedDataset {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            attributes: self.attributes.clone(),
            n_classes: self.n_classes,
            n_attributes: self.n_attributes,
            group_reads: AtomicUsize::new(self.group_reads()),
        }
    }
}

impl PartialEq for GroupedDataset {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.n_classes == other.n_classes
            && self.n_attributes == other.n_attributes
            && self.labels == other.labels
            && self.attributes == other.attributes
            && self.features == other.features
    }
}

impl GroupedDataset {
    pub fn new(
        name: impl Into<String>,
        features: Array2<f64>,
        labels: Vec<usize>,
        attributes: Vec<usize>,
        n_classes: usize,
        n_attributes: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        for (what, len) in [("labels", labels.len()), ("attributes", attributes.len())] {
            if len != n {
                return Err(Error::Shape {
                    context: if what == "labels" { "label count" } else { "attribute count" },
                    expected: n,
                    actual: len,
                });
            }
        }
        if let Some((i, y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::Range(format!("row {i}: label {y} outside [0, {n_classes})")));
        }
        if let Some((i, a)) = attributes.iter().enumerate().find(|(_, &a)| a >= n_attributes) {
            return Err(Error::Range(format!(
                "row {i}: attribute {a} outside [0, {n_attributes})"
            )));
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
            attributes,
            n_classes,
            n_attributes,
            group_reads: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn n_groups(&self) -> usize {
        self.n_classes * self.n_attributes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of audited group-label reads so far.
    pub fn group_reads(&self) -> usize {
        self.group_reads.load(Ordering::Relaxed)
    }

    fn note_group_read(&self) {
        self.group_reads.fetch_add(1, Ordering::Relaxed);
    }

    /// Attribute labels (audited).
    pub fn attributes(&self) -> &[usize] {
        self.note_group_read();
        &self.attributes
    }

    /// Group id `y * m + a` per row (audited).
    pub fn group_ids(&self) -> Vec<usize> {
        self.note_group_read();
        self.labels
            .iter()
            .zip(&self.attributes)
            .map(|(&y, &a)| y * self.n_attributes + a)
            .collect()
    }

    /// Rows of each group, in ascending order (audited).
    pub fn group_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_groups()];
        for (i, g) in self.group_ids().into_iter().enumerate() {
            out[g].push(i);
        }
        out
    }

    /// Examples per group (audited).
    pub fn group_counts(&self) -> Vec<usize> {
        self.group_indices().iter().map(Vec::len).collect()
    }

    /// Copies the given rows, in the given order, into a new dataset with a
    /// fresh audit counter.
    pub fn subset(&self, indices: &[usize]) -> GroupedDataset {
        GroupedDataset {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            attributes: indices.iter().map(|&i| self.attributes[i]).collect(),
            n_classes: self.n_classes,
            n_attributes: self.n_attributes,
            group_reads: AtomicUsize::new(0),
        }
    }

    /// Same rows and labels with a replacement attribute column.
    pub fn with_attributes(&self, attributes: Vec<usize>, n_attributes: usize) -> Result<GroupedDataset> {
        GroupedDataset::new(
            self.name.clone(),
            self.features.clone(),
            self.labels.clone(),
            attributes,
            self.n_classes,
            n_attributes,
        )
    }
}

// ---------------------------------------------------------------------------
// Synthetic generator

/// Two-class, two-attribute Gaussian dataset with a spurious attribute.
///
/// Row layout: `[core, spurious, noise_0, ..]` where the core coordinate is
/// centred at `+-mu_core` by label, the spurious one at `+-mu_spur` by
/// attribute, and the remaining `d_noise` coordinates are pure noise. All
/// coordinates share the standard deviation `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    /// Fraction of examples whose attribute matches the label.
    pub rho: f64,
    pub mu_core: f64,
    pub mu_spur: f64,
    pub d_noise: usize,
    pub sigma: f64,
    pub seed: u64,
}

/// Group sizes `n * {rho/2, (1-rho)/2, (1-rho)/2, rho/2}` for groups
/// `(y,a) = (0,0), (0,1), (1,0), (1,1)`.
///
/// Each minority group gets `round(n (1 - rho) / 2)`; the remainder is split
/// between the majority groups, with group `(1,1)` taking the odd example.
pub fn synthetic_group_sizes(n: usize, rho: f64) -> [usize; 4] {
    let minority = ((n as f64) * (1.0 - rho) / 2.0).round() as usize;
    let rest = n.saturating_sub(2 * minority);
    [rest / 2, minority, minority, rest - rest / 2]
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<GroupedDataset> {
    if !(spec.rho > 0.5 && spec.rho < 1.0) {
        return Err(Error::Range(format!("rho must lie in (0.5, 1), got {}", spec.rho)));
    }
    if !(spec.mu_core > 0.0 && spec.mu_spur > 0.0) {
        return Err(Error::Range("feature margins must be positive".into()));
    }
    if !(spec.sigma >= 0.0) {
        return Err(Error::Range("sigma must be nonnegative".into()));
    }
    let sizes = synthetic_group_sizes(spec.n, spec.rho);
    if let Some(g) = sizes.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroup {
            group: g,
            context: format!("n = {} and rho = {} leave no examples in this group", spec.n, spec.rho),
        });
    }

    let mut rng = rng_for(spec.seed, "synthetic");
    let mut rows: Vec<(usize, usize)> = Vec::with_capacity(spec.n);
    for (g, &count) in sizes.iter().enumerate() {
        rows.extend(std::iter::repeat_n((g / 2, g % 2), count));
    }
    rows.shuffle(&mut rng);

    let dim = 2 + spec.d_noise;
    let mut x = Array2::zeros((spec.n, dim));
    let sign = |v: usize| if v == 1 { 1.0 } else { -1.0 };
    for (mut row, &(y, a)) in x.rows_mut().into_iter().zip(&rows) {
        let mut z = || -> f64 { StandardNormal.sample(&mut rng) };
        row[0] = sign(y) * spec.mu_core + spec.sigma * z();
        row[1] = sign(a) * spec.mu_spur + spec.sigma * z();
        for j in 2..dim {
            row[j] = spec.sigma * z();
        }
    }
    GroupedDataset::new(
        "synthetic",
        x,
        rows.iter().map(|r| r.0).collect(),
        rows.iter().map(|r| r.1).collect(),
        2,
        2,
    )
}

/// Train/validation/test triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub train: GroupedDataset,
    pub val: GroupedDataset,
    pub test: GroupedDataset,
}

/// Synthetic benchmark: three independent draws from the same family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticBenchmark {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub rho: f64,
    /// Majority fraction of the validation and test splits.
    pub eval_rho: f64,
    pub mu_core: f64,
    pub mu_spur: f64,
    pub d_noise: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticBenchmark {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 1000,
            n_test: 4000,
            rho: 0.95,
            eval_rho: 0.95,
            mu_core: 1.0,
            mu_spur: 3.0,
            d_noise: 100,
            sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticBenchmark {
    pub fn split_spec(&self, split: &str) -> SyntheticSpec {
        let (n, rho) = match split {
            "train" => (self.n_train, self.rho),
            "val" => (self.n_val, self.eval_rho),
            _ => (self.n_test, self.eval_rho),
        };
        SyntheticSpec {
            n,
            rho,
            mu_core: self.mu_core,
            mu_spur: self.mu_spur,
            d_noise: self.d_noise,
            sigma: self.sigma,
            seed: crate::seed::derive_seed(self.seed, &[crate::seed::stream_label(split)]),
        }
    }

    pub fn generate(&self) -> Result<Benchmark> {
        let make = |split: &str| -> Result<GroupedDataset> {
            let mut d = generate_synthetic(&self.split_spec(split))?;
            d.name = format!("synthetic/{split}");
            Ok(d)
        };
        Ok(Benchmark {
            train: make("train")?,
            val: make("val")?,
            test: make("test")?,
        })
    }
}

// ---------------------------------------------------------------------------
// Embedding CSV

/// Reads `label,attribute,f0,...,f{d-1}` (any column order). Class and
/// attribute counts are inferred as `max + 1`.
pub fn load_embedding_csv(path: &Path) -> Result<GroupedDataset> {
    read_embedding_csv(path, None)
}

/// Like [`load_embedding_csv`] but checks labels and attributes against the
/// declared ranges `[0, n_classes)` and `[0, n_attributes)`.
pub fn load_embedding_csv_with(path: &Path, n_classes: usize, n_attributes: usize) -> Result<GroupedDataset> {
    read_embedding_csv(path, Some((n_classes, n_attributes)))
}

fn read_embedding_csv(path: &Path, declared: Option<(usize, usize)>) -> Result<GroupedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header = reader.headers()?.clone();

    let mut label_col = None;
    let mut attr_col = None;
    let mut feature_cols: BTreeMap<usize, usize> = BTreeMap::new();
    for (c, name) in header.iter().enumerate() {
        match name.trim() {
            "label" => label_col = Some(c),
            "attribute" => attr_col = Some(c),
            other => {
                let idx = other
                    .strip_prefix('f')
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::Format {
                        path: path.to_path_buf(),
                        message: format!("unexpected column `{other}`"),
                    })?;
                if feature_cols.insert(idx, c).is_some() {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        message: format!("duplicate column `{other}`"),
                    });
                }
            }
        }
    }
    let missing = |column: &str| Error::MissingColumn {
        path: path.to_path_buf(),
        column: column.to_string(),
    };
    let label_col = label_col.ok_or_else(|| missing("label"))?;
    let attr_col = attr_col.ok_or_else(|| missing("attribute"))?;
    let d = feature_cols.keys().next_back().map_or(0, |&m| m + 1);
    if d == 0 {
        return Err(missing("f0"));
    }
    let feature_order: Vec<usize> = (0..d)
        .map(|j| feature_cols.get(&j).copied().ok_or_else(|| missing(&format!("f{j}"))))
        .collect::<Result<_>>()?;

    let mut labels = Vec::new();
    let mut attributes = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based data row number, header excluded
        let row = r + 1;
        let field = |c: usize| record.get(c).unwrap_or("").trim();
        let parse_index = |c: usize| -> Result<usize> {
            field(c).parse::<usize>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: header[c].to_string(),
                value: field(c).to_string(),
            })
        };
        labels.push(parse_index(label_col)?);
        attributes.push(parse_index(attr_col)?);
        for &c in &feature_order {
            let v = field(c).parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                column: header[c].to_string(),
                value: field(c).to_string(),
            })?;
            values.push(v);
        }
    }

    let n = labels.len();
    let (k, m) = match declared {
        Some(km) => km,
        None => (
            labels.iter().max().map_or(1, |&v| v + 1),
            attributes.iter().max().map_or(1, |&v| v + 1),
        ),
    };
    let features = Array2::from_shape_vec((n, d), values).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let name = path
        .file_stem()
        .map_or_else(|| "embeddings".to_string(), |s| s.to_string_lossy().into_owned());
    GroupedDataset::new(name, features, labels, attributes, k, m)
}

/// Writes the dataset in the embedding CSV layout. Floats use the shortest
/// representation that parses back to the same value.
pub fn save_embedding_csv(dataset: &GroupedDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let d = dataset.input_dim();
    let mut header = vec!["label".to_string(), "attribute".to_string()];
    header.extend((0..d).map(|j| format!("f{j}")));
    writer.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(d + 2);
    for ((row, &y), &a) in dataset
        .features
        .rows()
        .into_iter()
        .zip(&dataset.labels)
        .zip(&dataset.attributes)
    {
        record.clear();
        record.push(y.to_string());
        record.push(a.to_string());
        record.extend(row.iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits

/// Partition of a training pool into a group-unlabeled part and a
/// group-labeled part, plus an optional held-out part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    /// Rows used without group labels (feature extraction).
    pub unlabeled: Vec<usize>,
    /// Rows whose group labels are used (robust retraining).
    pub labeled: Vec<usize>,
    /// Held-out rows drawn from the same pool; empty when validation data
    /// comes from a separate dataset.
    pub val: Vec<usize>,
    pub p: f64,
    pub seed: u64,
    /// Groups that ended up entirely on one side of a stratified split.
    pub warnings: Vec<String>,
}

fn check_fraction(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Range(format!("{name} must lie in [0, 1], got {p}")));
    }
    Ok(())
}

fn take_fraction(pool: &[usize], p: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    let k = ((pool.len() as f64) * p).round() as usize;
    let mut taken = shuffled[..k].to_vec();
    let mut rest = shuffled[k..].to_vec();
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

fn split_pool(
    dataset: &GroupedDataset,
    pool: &[usize],
    p: f64,
    stratify: bool,
    rng: &mut ChaCha8Rng,
    warnings: &mut Vec<String>,
) -> (Vec<usize>, Vec<usize>) {
    if !stratify {
        return take_fraction(pool, p, rng);
    }
    let groups = dataset.group_ids();
    let mut by_group: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_groups()];
    for &i in pool {
        by_group[groups[i]].push(i);
    }
    let (mut taken, mut rest) = (Vec::new(), Vec::new());
    for (g, members) in by_group.iter().enumerate() {
        let (t, r) = take_fraction(members, p, rng);
        if !members.is_empty() && p > 0.0 && p < 1.0 && (t.is_empty() || r.is_empty()) {
            let msg = format!(
                "group {g} has {} example(s); stratified split at p = {p} leaves one side without it",
                members.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        taken.extend(t);
        rest.extend(r);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

/// Splits all rows into `labeled` (fraction `p`, `round(p n)` rows when not
/// stratified) and `unlabeled` (the rest).
pub fn make_split(dataset: &GroupedDataset, p: f64, seed: u64, stratify: bool) -> Result<SplitPlan> {
    check_fraction("p", p)?;
    let mut rng = rng_for(seed, "split");
    let mut warnings = Vec::new();
    let pool: Vec<usize> = (0..dataset.len()).collect();
    let (labeled, unlabeled) = split_pool(dataset, &pool, p, stratify, &mut rng, &mut warnings);
    Ok(SplitPlan {
        unlabeled,
        labeled,
        val: Vec::new(),
        p,
        seed,
        warnings,
    })
}

/// Carves a held-out fraction first, then splits the remainder as in
/// [`make_split`].
pub fn make_split_with_holdout(
    dataset: &GroupedDataset,
    p: f64,
    val_fraction: f64,
    seed: u64,
    stratify: bool,
) -> Result<SplitPlan> {
    check_fraction("p", p)?;
    check_fraction("val_fraction", val_fraction)?;
    let mut rng = rng_for(seed, "split");
    let mut warnings = Vec::new();
    let pool: Vec<usize> = (0..dataset.len()).collect();
    let (val, train_pool) = split_pool(dataset, &pool, val_fraction, stratify, &mut rng, &mut warnings);
    let (labeled, unlabeled) = split_pool(dataset, &train_pool, p, stratify, &mut rng, &mut warnings);
    Ok(SplitPlan {
        unlabeled,
        labeled,
        val,
        p,
        seed,
        warnings,
    })
}

/// Splits validation rows into a retraining half and a selection half.
/// With an odd count the retraining half gets the extra row.
pub fn split_val_in_half(indices: &[usize], seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 validation rows to halve, got {}",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut rng_for(seed, "val-halves"));
    let cut = indices.len().div_ceil(2);
    let mut retrain = shuffled[..cut].to_vec();
    let mut select = shuffled[cut..].to_vec();
    retrain.sort_unstable();
    select.sort_unstable();
    Ok((retrain, select))
}

/// Downsamples every group, without replacement, to the smallest group size.
/// Returns row indices in ascending order.
pub fn subsample_to_minority(dataset: &GroupedDataset, seed: u64) -> Result<Vec<usize>> {
    let groups = dataset.group_indices();
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptyGroup {
            group: g,
            context: "cannot subsample to the minority size".into(),
        });
    }
    let target = groups.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = rng_for(seed, "subsample");
    let mut out: Vec<usize> = groups
        .iter()
        .flat_map(|members| members.choose_multiple(&mut rng, target).copied().collect::<Vec<_>>())
        .collect();
    out.sort_unstable();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Batching

/// Shuffled mini-batches covering `0..n` once; the last batch may be short.
pub fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub groups: Vec<usize>,
    /// Some row appears more than once in this batch.
    pub has_duplicates: bool,
}

/// Endless stream of group-balanced batches.
///
/// Each group keeps its own shuffled queue. A batch takes `batch_size / G`
/// rows from every queue; an exhausted queue is reshuffled and restarted, so
/// rows are drawn with replacement across passes and a group smaller than its
/// quota contributes duplicates.
#[derive(Debug, Clone)]
pub struct GroupBalancedSampler {
    groups: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    quota: usize,
    rng: ChaCha8Rng,
}

impl GroupBalancedSampler {
    pub fn new(groups: Vec<Vec<usize>>, batch_size: usize, seed: u64) -> Result<Self> {
        let g = groups.len();
        if g == 0 || batch_size == 0 || !batch_size.is_multiple_of(g) {
            return Err(Error::Config(format!(
                "balanced batches need batch_size divisible by the number of groups ({g}), got {batch_size}"
            )));
        }
        if let Some(empty) = groups.iter().position(Vec::is_empty) {
            return Err(Error::EmptyGroup {
                group: empty,
                context: "group-balanced sampling".into(),
            });
        }
        let mut rng = rng_for(seed, "balanced-batches");
        let mut groups = groups;
        for members in &mut groups {
            members.shuffle(&mut rng);
        }
        Ok(Self {
            cursors: vec![0; g],
            groups,
            quota: batch_size / g,
            rng,
        })
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn next_batch(&mut self) -> Batch {
        let mut indices = Vec::with_capacity(self.quota * self.groups.len());
        let mut groups = Vec::with_capacity(indices.capacity());
        for (g, members) in self.groups.iter_mut().enumerate() {
            for _ in 0..self.quota {
                if self.cursors[g] == members.len() {
                    members.shuffle(&mut self.rng);
                    self.cursors[g] = 0;
                }
                indices.push(members[self.cursors[g]]);
                groups.push(g);
                self.cursors[g] += 1;
            }
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        let has_duplicates = seen.windows(2).any(|w| w[0] == w[1]);
        Batch {
            indices,
            groups,
            has_duplicates,
        }
    }
}

impl Iterator for GroupBalancedSampler {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

/// Group-balanced batch stream over all rows of `dataset`.
pub fn group_balanced_batches(
    dataset: &GroupedDataset,
    batch_size: usize,
    seed: u64,
) -> Result<GroupBalancedSampler> {
    GroupBalancedSampler::new(dataset.group_indices(), batch_size, seed)
}

/// Largest power of two not above `n` (0 for `n == 0`).
pub fn floor_pow2(n: usize) -> usize {
    if n == 0 {
        0
    } else {
        1 << (usize::BITS - 1 - n.leading_zeros())
    }
}

/// Per-group batch quotas worth searching when the smallest group is tiny:
/// powers of two from 4 up to `min(min_group, default_quota)`. Falls back to
/// the largest power of two not above that cap when it is below 4.
pub fn candidate_batch_quotas(min_group: usize, default_quota: usize) -> Vec<usize> {
    let cap = min_group.min(default_quota);
    let mut out: Vec<usize> = std::iter::successors(Some(4usize), |q| Some(q * 2))
        .take_while(|&q| q <= cap)
        .collect();
    if out.is_empty() && cap > 0 {
        out.push(floor_pow2(cap));
    }
    out
}

/// Uniform draw without replacement of `round(fraction * n)` rows, ascending.
pub fn sample_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    check_fraction("fraction", fraction)?;
    let pool: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, "fraction");
    Ok(take_fraction(&pool, fraction, &mut rng).0)
}
