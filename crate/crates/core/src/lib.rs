//! Group-robust training of small networks on fixed embeddings.
//!
//! The crate trains multilayer perceptrons with ERM, group DRO, group
//! reweighting and group subsampling, and composes them into two-phase
//! recipes where a feature extractor is trained without group labels and the
//! classifier is retrained on a separate group-labeled split.

// `!(x >= 0.0)` is how range checks reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diffnet;
pub mod error;
pub mod metrics;
pub mod objectives;
pub mod pipeline;
pub mod seed;
pub mod trainer;

pub use data::{Batch, Benchmark, GroupBalancedSampler, GroupedDataset, SplitPlan, SyntheticBenchmark, SyntheticSpec};
pub use diffnet::{Gradients, MlpModel, Scope, SgdParams};
pub use error::{Error, Result};
pub use metrics::{GroupMetrics, MetricSummary, Stat, Weighting};
pub use objectives::{GdroState, GroupLossReport};
pub use pipeline::{ExperimentResult, Recipe, RecipeConfig, RetrainAlgorithm, SeedRun, TestWeighting};
pub use trainer::{Criterion, EpochRecord, Objective, TrainConfig, TrainOutcome};
