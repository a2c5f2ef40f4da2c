//! Dense MLP with exact backpropagation and a detachable linear head.
//!
//! The network is a stack of affine layers. Hidden layers use a rectifier;
//! the last layer (the head) is affine only and produces logits. Everything
//! before the head is the feature extractor, and its output (the input of the
//! head) is the feature matrix.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Lower clamp applied to probabilities inside the log of the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `[out x in]`
    pub weight: Array2<f64>,
    /// `[out]`
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `x W^T + b`, without the activation.
    pub fn affine(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Gradient (or velocity) of one layer; same shapes as [`Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &Layer) -> Self {
        Self {
            weight: Array2::zeros(layer.weight.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

/// Per-layer gradients, shape-congruent with the model they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model.layers.iter().map(LayerGrad::zeros_like).collect(),
        }
    }
}

/// Momentum buffers for [`sgd_step`].
pub type Velocity = Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    #[default]
    Full,
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Array2<f64>,
    pub features: Array2<f64>,
}

impl MlpModel {
    /// Builds an MLP `input_dim -> hidden... -> n_classes` with uniform
    /// Glorot initialization and zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], n_classes: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init");
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(n_classes);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weight =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..=bound));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                    activation: if i + 1 == n_layers {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self { layers, seed }
    }

    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::Shape {
                    context: "layer chaining",
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape {
                    context: "bias length",
                    expected: l.out_dim(),
                    actual: l.bias.len(),
                });
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::Config("head layer must have identity activation".into()));
        }
        Ok(Self { layers, seed })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn head_index(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn head(&self) -> &Layer {
        &self.layers[self.head_index()]
    }

    pub fn head_mut(&mut self) -> &mut Layer {
        let i = self.head_index();
        &mut self.layers[i]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.head().out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.head().in_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape {
                context: "forward input columns",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    /// Penultimate activations (the input of the head).
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers[..self.head_index()] {
            let mut z = layer.affine(a.view());
            layer.activation.apply(&mut z);
            a = z;
        }
        Ok(a)
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<ForwardOutput> {
        let features = self.features(x)?;
        let logits = self.head().affine(features.view());
        Ok(ForwardOutput { logits, features })
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x)?.logits)
    }

    /// Class predictions; ties go to the lowest class index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

pub fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Per-row cross-entropy and its gradient w.r.t. the logits (`softmax - onehot`).
///
/// Rows whose target probability falls under [`PROB_FLOOR`] sit on the flat
/// part of the clamped loss and get a zero gradient.
pub fn cross_entropy_rows(logits: &Array2<f64>, labels: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let floor_loss = -PROB_FLOOR.ln();
    let mut losses = Vec::with_capacity(labels.len());
    let mut dlogits = Array2::zeros(logits.raw_dim());
    for ((row, mut drow), &y) in logits.rows().into_iter().zip(dlogits.rows_mut()).zip(labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        let loss = lse - row[y];
        if loss >= floor_loss {
            losses.push(floor_loss);
            continue;
        }
        losses.push(loss);
        for (d, &v) in drow.iter_mut().zip(row.iter()) {
            *d = (v - lse).exp();
        }
        drow[y] -= 1.0;
    }
    (losses, dlogits)
}

fn check_batch(model: &MlpModel, x: &ArrayView2<'_, f64>, labels: &[usize], weights: &[f64]) -> Result<()> {
    if labels.len() != x.nrows() || weights.len() != x.nrows() {
        return Err(Error::Shape {
            context: "batch rows",
            expected: x.nrows(),
            actual: labels.len().min(weights.len()),
        });
    }
    let k = model.n_classes();
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Range(format!("label {bad} outside [0, {k})")));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(Error::Range("per-example weights must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Weighted mean cross-entropy `sum_i w_i CE_i / sum_i w_i` and its exact gradient.
pub fn backward(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &[f64],
) -> Result<(f64, Gradients)> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateBatch);
    }
    backward_with_denominator(model, x, labels, weights, total)
}

/// Like [`backward`] but divides by a caller-supplied denominator instead of
/// the weight sum. The GDRO objective uses `1.0` so the loss is exactly
/// `sum_g q_g L_g` even when some groups are absent from the batch.
pub fn backward_with_denominator(
    model: &MlpModel,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    weights: &[f64],
    denominator: f64,
) -> Result<(f64, Gradients)> {
    let tape = Tape::record(model, x)?;
    tape.backward(model, labels, weights, denominator)
}

/// Activations of one forward pass, kept for a later backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input followed by every hidden activation.
    activations: Vec<Array2<f64>>,
    logits: Array2<f64>,
}

impl Tape {
    pub fn record(model: &MlpModel, x: ArrayView2<'_, f64>) -> Result<Self> {
        model.check_input(&x)?;
        let mut activations: Vec<Array2<f64>> = Vec::with_capacity(model.layers.len());
        activations.push(x.to_owned());
        for layer in &model.layers[..model.head_index()] {
            let mut z = layer.affine(activations.last().expect("nonempty").view());
            layer.activation.apply(&mut z);
            activations.push(z);
        }
        let logits = model.head().affine(activations.last().expect("nonempty").view());
        Ok(Self { activations, logits })
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn features(&self) -> &Array2<f64> {
        self.activations.last().expect("nonempty")
    }

    /// Weighted loss `sum_i w_i CE_i / denominator` and its gradient.
    pub fn backward(
        &self,
        model: &MlpModel,
        labels: &[usize],
        weights: &[f64],
        denominator: f64,
    ) -> Result<(f64, Gradients)> {
        check_batch(model, &self.activations[0].view(), labels, weights)?;
        if !(denominator > 0.0) {
            return Err(Error::DegenerateBatch);
        }
        let (loss, mut delta) = scaled_loss_grad(&self.logits, labels, weights, denominator);
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(model.layers.len());
        for (li, layer) in model.layers.iter().enumerate().rev() {
            let input = &self.activations[li];
            grads.push(LayerGrad {
                weight: delta.t().dot(input),
                bias: delta.sum_axis(Axis(0)),
            });
            if li > 0 {
                let mut upstream = delta.dot(&layer.weight);
                // the input of this layer is the rectified output of the previous one
                Zip::from(&mut upstream).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = upstream;
            }
        }
        grads.reverse();
        Ok((loss, Gradients { layers: grads }))
    }

    /// Gradient of the head only; the extractor is treated as frozen.
    pub fn head_backward(
        &self,
        model: &MlpModel,
        labels: &[usize],
        weights: &[f64],
        denominator: f64,
    ) -> Result<(f64, LayerGrad)> {
        check_batch(model, &self.activations[0].view(), labels, weights)?;
        if !(denominator > 0.0) {
            return Err(Error::DegenerateBatch);
        }
        let (loss, delta) = scaled_loss_grad(&self.logits, labels, weights, denominator);
        let features = self.features();
        Ok((
            loss,
            LayerGrad {
                weight: delta.t().dot(features),
                bias: delta.sum_axis(Axis(0)),
            },
        ))
    }
}

fn scaled_loss_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    weights: &[f64],
    denominator: f64,
) -> (f64, Array2<f64>) {
    let (losses, mut dlogits) = cross_entropy_rows(logits, labels);
    let mut loss = 0.0;
    for ((l, &w), mut drow) in losses.iter().zip(weights).zip(dlogits.rows_mut()) {
        let scale = w / denominator;
        loss += w * l;
        drow.mapv_inplace(|d| d * scale);
    }
    (loss / denominator, dlogits)
}

/// One SGD-with-momentum step on a single layer:
/// `v <- momentum v + g + l2 p`, `p <- p - lr v`.
pub fn sgd_step_layer(layer: &mut Layer, grad: &LayerGrad, params: &SgdParams, velocity: &mut LayerGrad) {
    let SgdParams { lr, momentum, l2 } = *params;
    Zip::from(&mut velocity.weight)
        .and(&grad.weight)
        .and(&mut layer.weight)
        .for_each(|v, &g, p| {
            *v = momentum * *v + g + l2 * *p;
            *p -= lr * *v;
        });
    Zip::from(&mut velocity.bias)
        .and(&grad.bias)
        .and(&mut layer.bias)
        .for_each(|v, &g, p| {
            *v = momentum * *v + g + l2 * *p;
            *p -= lr * *v;
        });
}

pub fn sgd_step(
    model: &mut MlpModel,
    grads: &Gradients,
    params: &SgdParams,
    velocity: &mut Velocity,
    scope: Scope,
) {
    debug_assert!(params.lr > 0.0 && (0.0..1.0).contains(&params.momentum) && params.l2 >= 0.0);
    let head = model.head_index();
    for (i, ((layer, grad), vel)) in model
        .layers
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut velocity.layers)
        .enumerate()
    {
        if scope == Scope::HeadOnly && i != head {
            continue;
        }
        sgd_step_layer(layer, grad, params, vel);
    }
}

/// Divides every head row by its norm raised to `power` and zeroes the head bias.
pub fn rescale_head(model: &MlpModel, power: f64) -> Result<MlpModel> {
    let mut out = model.clone();
    let head = out.head_mut();
    for (r, mut row) in head.weight.rows_mut().into_iter().enumerate() {
        if power == 0.0 {
            continue;
        }
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 {
            return Err(Error::SingularRow { row: r, power });
        }
        let scale = norm.powf(power);
        row.mapv_inplace(|v| v / scale);
    }
    head.bias.fill(0.0);
    Ok(out)
}

const CHECKPOINT_FORMAT: &str = "crois-mlp-v1";

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLayer {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    /// row-major `[out x in]`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// JSON checkpoint layout. Floats are written in shortest round-trip form.
#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    seed: u64,
    head_index: usize,
    layers: Vec<CheckpointLayer>,
}

impl MlpModel {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            seed: self.seed,
            head_index: self.head_index(),
            layers: self
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        Self::from_checkpoint(file)
    }

    fn from_checkpoint(file: CheckpointFile) -> Result<Self> {
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format `{}`", file.format)));
        }
        if file.head_index + 1 != file.layers.len() {
            return Err(Error::Config("head must be the last layer".into()));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weight).map_err(|_| {
                    Error::Shape {
                        context: "checkpoint weight",
                        expected: l.out_dim * l.in_dim,
                        actual: 0,
                    }
                })?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, file.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let file: CheckpointFile = serde_json::from_reader(reader)?;
        Self::from_checkpoint(file)
    }
}
