//! Feed-forward classifier trained with mini-batch SGD.
//!
//! Parameters are stored as one flat vector. Layer `l` occupies
//! `inputs * outputs` weights in row-major `(inputs, outputs)` order followed
//! by `outputs` biases. Hidden layers use ReLU; the output layer feeds a
//! softmax with cross-entropy loss.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, ShardView};
use crate::error::ModelError;
use crate::seed;
use crate::ClientId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_count() + self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
    shapes: Vec<LayerShape>,
    /// Bytes per parameter on the wire (`z` in the upload-time model).
    param_bytes: usize,
}

impl ModelParams {
    pub fn from_parts(
        values: Vec<f64>,
        shapes: Vec<LayerShape>,
        param_bytes: usize,
    ) -> Result<Self, ModelError> {
        let expected: usize = shapes.iter().map(LayerShape::len).sum();
        if values.len() != expected {
            return Err(ModelError::LengthMismatch { expected, actual: values.len() });
        }
        if param_bytes == 0 {
            return Err(ModelError::InvalidArchitecture("param_bytes must be positive".into()));
        }
        for pair in shapes.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(ModelError::InvalidArchitecture(format!(
                    "layer widths {} and {} do not chain",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { values, shapes, param_bytes })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    /// `V`, the number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub fn param_bytes(&self) -> usize {
        self.param_bytes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn num_outputs(&self) -> usize {
        self.shapes[self.shapes.len() - 1].outputs
    }

    /// Widths of every layer boundary, e.g. `[784, 128, 10]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.shapes[0].inputs];
        w.extend(self.shapes.iter().map(|s| s.outputs));
        w
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.shapes.len());
        let mut acc = 0;
        for s in &self.shapes {
            off.push(acc);
            acc += s.len();
        }
        off
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self { values, shapes: self.shapes.clone(), param_bytes: self.param_bytes }
    }
}

/// `delta = w_local - w_global` for one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub delta: Vec<f64>,
    pub owner_id: ClientId,
    pub sample_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 64, lr: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub global_accuracy: f64,
    /// `None` for classes absent from the evaluation set.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
}

/// Builds an MLP with the given layer widths (input first, classes last).
///
/// Weights follow a Glorot-uniform draw, `U(-a, a)` with
/// `a = sqrt(6 / (fan_in + fan_out))`; biases start at zero.
pub fn init_model(widths: &[usize], param_bytes: usize, seed: u64) -> Result<ModelParams, ModelError> {
    if widths.len() < 2 {
        return Err(ModelError::InvalidArchitecture(
            "need at least an input and an output width".into(),
        ));
    }
    if widths.contains(&0) {
        return Err(ModelError::InvalidArchitecture(format!("zero-width layer in {widths:?}")));
    }
    let shapes: Vec<LayerShape> = widths
        .windows(2)
        .map(|w| LayerShape { inputs: w[0], outputs: w[1] })
        .collect();
    let mut rng = seed::derive_rng(seed, seed::Purpose::ModelInit, 0, 0);
    let mut values = Vec::with_capacity(shapes.iter().map(LayerShape::len).sum());
    for s in &shapes {
        let a = (6.0 / (s.inputs + s.outputs) as f64).sqrt();
        values.extend((0..s.weight_count()).map(|_| rng.random_range(-a..a)));
        values.extend(std::iter::repeat_n(0.0, s.outputs));
    }
    ModelParams::from_parts(values, shapes, param_bytes)
}

/// Elementwise `params + delta`.
pub fn apply_update(params: &ModelParams, delta: &[f64]) -> Result<ModelParams, ModelError> {
    if delta.len() != params.values.len() {
        return Err(ModelError::LengthMismatch { expected: params.values.len(), actual: delta.len() });
    }
    let values = params.values.iter().zip(delta).map(|(w, d)| w + d).collect();
    Ok(params.with_values(values))
}

// ---------------------------------------------------------------------------
// Forward / backward

fn layer_views<'a>(
    values: &'a [f64],
    shape: LayerShape,
    offset: usize,
) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
    let w = &values[offset..offset + shape.weight_count()];
    let b = &values[offset + shape.weight_count()..offset + shape.len()];
    (
        ArrayView2::from_shape((shape.inputs, shape.outputs), w).expect("layer shape"),
        ArrayView1::from(b),
    )
}

/// Activations of every layer: `acts[0]` is the input batch, `acts[L]` the logits.
fn forward(params: &ModelParams, values: &[f64], x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let offsets = params.offsets();
    let last = params.shapes.len() - 1;
    let mut acts = Vec::with_capacity(params.shapes.len() + 1);
    acts.push(x.to_owned());
    for (l, (&shape, &off)) in params.shapes.iter().zip(&offsets).enumerate() {
        let (w, b) = layer_views(values, shape, off);
        let mut z = acts[l].dot(&w);
        z += &b;
        if l < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(z);
    }
    acts
}

/// Row-wise softmax in place; returns per-row log-sum-exp.
fn softmax_rows(logits: &mut Array2<f64>) -> Array1<f64> {
    let mut lse = Array1::zeros(logits.nrows());
    for (mut row, out) in logits.rows_mut().into_iter().zip(lse.iter_mut()) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            sum += e;
            e
        });
        row /= sum;
        *out = max + sum.ln();
    }
    lse
}

/// Softmax class probabilities for every row of `x`.
pub fn predict_proba(params: &ModelParams, x: ArrayView2<f64>) -> Array2<f64> {
    let mut acts = forward(params, &params.values, x);
    let mut logits = acts.pop().expect("at least one layer");
    softmax_rows(&mut logits);
    logits
}

/// Mean cross-entropy over the batch.
pub fn loss(params: &ModelParams, values: &[f64], x: ArrayView2<f64>, labels: &[usize]) -> f64 {
    let mut acts = forward(params, values, x);
    let logits = acts.pop().expect("at least one layer");
    let mut probs = logits.clone();
    let lse = softmax_rows(&mut probs);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| lse[i] - logits[(i, y)])
        .sum::<f64>()
        / labels.len() as f64
}

/// Mean cross-entropy and its gradient with respect to `values`, written into `grad`.
fn loss_and_gradient_into(
    params: &ModelParams,
    values: &[f64],
    x: ArrayView2<f64>,
    labels: &[usize],
    grad: &mut [f64],
) -> f64 {
    let n = labels.len() as f64;
    let offsets = params.offsets();
    let mut acts = forward(params, values, x);
    let logits = acts.pop().expect("at least one layer");
    let mut delta = logits.clone();
    let lse = softmax_rows(&mut delta);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        total += lse[i] - logits[(i, y)];
        delta[(i, y)] -= 1.0;
    }
    delta /= n;

    for l in (0..params.shapes.len()).rev() {
        let shape = params.shapes[l];
        let off = offsets[l];
        let (gw, gb) = grad[off..off + shape.len()].split_at_mut(shape.weight_count());
        let mut gw = ArrayViewMut2::from_shape((shape.inputs, shape.outputs), gw).expect("layer shape");
        general_mat_mul(1.0, &acts[l].t(), &delta, 0.0, &mut gw);
        ArrayViewMut1::from(gb).assign(&delta.sum_axis(Axis(0)));
        if l > 0 {
            let (w, _) = layer_views(values, shape, off);
            let mut prev = delta.dot(&w.t());
            ndarray::Zip::from(&mut prev).and(&acts[l]).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    total / n
}

/// Mean cross-entropy over `(x, labels)` and its analytic gradient.
pub fn loss_and_gradient(
    params: &ModelParams,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.values.len()];
    let l = loss_and_gradient_into(params, &params.values, x, labels, &mut grad);
    (l, grad)
}

/// Runs `epochs` of mini-batch SGD from `global` and returns the trained model.
///
/// The shard is reshuffled at the start of each epoch from `seed`.
pub fn train_local(
    global: &ModelParams,
    shard: &ShardView<'_>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ModelParams, ModelError> {
    if shard.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(ModelError::InvalidHyperparameter(format!("lr must be >= 0, got {}", cfg.lr)));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(ModelError::InvalidHyperparameter("epochs and batch_size must be >= 1".into()));
    }
    let ds = shard.dataset();
    if ds.dim() != global.input_dim() {
        return Err(ModelError::InputMismatch { expected: global.input_dim(), actual: ds.dim() });
    }
    let mut values = global.values.clone();
    let mut grad = vec![0.0; values.len()];
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut rng = seed::rng(seed);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let rows: Vec<usize> = batch.iter().map(|&k| shard.indices()[k]).collect();
            let labels: Vec<usize> = batch.iter().map(|&k| shard.label(k)).collect();
            let x = ds.features().select(Axis(0), &rows);
            let l = loss_and_gradient_into(global, &values, x.view(), &labels, &mut grad);
            epoch_loss += l * batch.len() as f64;
            for (w, g) in values.iter_mut().zip(&grad) {
                *w -= cfg.lr * g;
            }
        }
        if !epoch_loss.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteLoss { epoch });
        }
    }
    Ok(global.with_values(values))
}

/// Local training followed by `w_local - w_global`.
pub fn local_update(
    global: &ModelParams,
    shard: &ShardView<'_>,
    owner: ClientId,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<WeightUpdate, ModelError> {
    let local = train_local(global, shard, cfg, seed)?;
    let delta = local.values.iter().zip(&global.values).map(|(l, g)| l - g).collect();
    Ok(WeightUpdate { delta, owner_id: owner, sample_count: shard.len() })
}

/// Accuracy, per-class accuracy, mean loss and predictions on `test`.
pub fn evaluate(params: &ModelParams, test: &LabeledDataset) -> Result<EvalReport, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if test.dim() != params.input_dim() {
        return Err(ModelError::InputMismatch { expected: params.input_dim(), actual: test.dim() });
    }
    let mut acts = forward(params, &params.values, test.features().view());
    let logits = acts.pop().expect("at least one layer");
    let mut probs = logits.clone();
    let lse = softmax_rows(&mut probs);

    let classes = test.num_classes().max(params.num_outputs());
    let mut correct = vec![0usize; classes];
    let mut total = vec![0usize; classes];
    let mut predictions = Vec::with_capacity(test.len());
    let mut loss_sum = 0.0;
    for (i, &y) in test.labels().iter().enumerate() {
        let row = logits.row(i);
        // First maximum wins on ties.
        let pred = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        predictions.push(pred);
        total[y] += 1;
        if pred == y {
            correct[y] += 1;
        }
        loss_sum += lse[i] - logits[(i, y)];
    }
    let hits: usize = correct.iter().sum();
    Ok(EvalReport {
        global_accuracy: hits as f64 / test.len() as f64,
        per_class_accuracy: correct
            .iter()
            .zip(&total)
            .take(test.num_classes())
            .map(|(&c, &t)| (t > 0).then(|| c as f64 / t as f64))
            .collect(),
        mean_loss: loss_sum / test.len() as f64,
        predictions,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// A checkpoint is a UTF-8 header terminated by an empty line, followed by
// `param_count` little-endian IEEE-754 f64 values:
//
//     uavfl-checkpoint v1
//     layers 784x128 128x10
//     param_count 101770
//     param_bytes 4
//     encoding f64le
//     <empty line>
//     <binary payload>

const CHECKPOINT_MAGIC: &str = "uavfl-checkpoint v1";

pub fn checkpoint_header(params: &ModelParams) -> String {
    let layers: Vec<String> =
        params.shapes.iter().map(|s| format!("{}x{}", s.inputs, s.outputs)).collect();
    format!(
        "{CHECKPOINT_MAGIC}\nlayers {}\nparam_count {}\nparam_bytes {}\nencoding f64le\n\n",
        layers.join(" "),
        params.param_count(),
        params.param_bytes
    )
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(checkpoint_header(params).as_bytes())?;
    for v in &params.values {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad("missing header terminator"));
        }
        let line = line.trim_end_matches('\n').to_string();
        if line.is_empty() {
            break;
        }
        lines.push(line);
    }
    if lines.first().map(String::as_str) != Some(CHECKPOINT_MAGIC) {
        return Err(bad("unrecognized checkpoint magic"));
    }
    let field = |key: &str| {
        lines
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(&format!("missing `{key}`")))
    };
    if field("encoding")? != "f64le" {
        return Err(bad("unsupported encoding"));
    }
    let shapes = field("layers")?
        .split_whitespace()
        .map(|tok| {
            let (a, b) = tok.split_once('x').ok_or_else(|| bad("malformed layer"))?;
            Ok(LayerShape {
                inputs: a.parse().map_err(|_| bad("malformed layer"))?,
                outputs: b.parse().map_err(|_| bad("malformed layer"))?,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let count: usize = field("param_count")?.parse().map_err(|_| bad("bad param_count"))?;
    let param_bytes: usize = field("param_bytes")?.parse().map_err(|_| bad("bad param_bytes"))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload)?;
    if payload.len() != count * 8 {
        return Err(bad("payload length does not match param_count"));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ModelParams::from_parts(values, shapes, param_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_dataset;
    use ndarray::array;

    #[test]
    fn parameter_counts() {
        assert_eq!(init_model(&[784, 128, 10], 4, 0).unwrap().param_count(), 101_770);
        assert_eq!(init_model(&[784, 10], 4, 0).unwrap().param_count(), 7_850);
        assert!(init_model(&[784], 4, 0).is_err());
        assert!(init_model(&[784, 0, 10], 4, 0).is_err());
        assert_eq!(init_model(&[5, 3], 4, 9).unwrap(), init_model(&[5, 3], 4, 9).unwrap());
        assert_ne!(init_model(&[5, 3], 4, 9).unwrap(), init_model(&[5, 3], 4, 10).unwrap());
    }

    #[test]
    fn biases_start_at_zero() {
        let p = init_model(&[4, 3, 2], 4, 1).unwrap();
        assert!(p.values()[12..15].iter().all(|&b| b == 0.0));
        assert!(p.values()[21..23].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn apply_update_algebra() {
        let p = init_model(&[3, 2], 4, 2).unwrap();
        let zero = vec![0.0; p.param_count()];
        assert_eq!(apply_update(&p, &zero).unwrap(), p);
        let neg: Vec<f64> = p.values().iter().map(|v| -v).collect();
        assert!(apply_update(&p, &neg).unwrap().values().iter().all(|&v| v == 0.0));
        let a: Vec<f64> = (0..p.param_count()).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..p.param_count()).map(|i| 1.0 - i as f64).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = apply_update(&apply_update(&p, &a).unwrap(), &b).unwrap();
        let rhs = apply_update(&p, &ab).unwrap();
        for (l, r) in lhs.values().iter().zip(rhs.values()) {
            assert!((l - r).abs() < 1e-12);
        }
        assert!(matches!(apply_update(&p, &[1.0]), Err(ModelError::LengthMismatch { .. })));
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let ds = generate_synthetic_dataset(2, 5, 3, 4.0, 0).unwrap();
        let p = init_model(&[3, 4, 2], 4, 0).unwrap();
        let cfg = TrainConfig { epochs: 2, batch_size: 3, lr: 0.0 };
        let u = local_update(&p, &ds.view(), ClientId(0), &cfg, 5).unwrap();
        assert!(u.delta.iter().all(|&d| d == 0.0));
        assert_eq!(u.sample_count, 10);
    }

    #[test]
    fn single_sample_step_matches_softmax_regression_gradient() {
        let x = array![[0.3, -1.2, 2.0]];
        let ds = LabeledDataset::new(x.clone(), vec![1], 3).unwrap();
        let p = init_model(&[3, 3], 4, 11).unwrap();
        let lr = 0.05;
        let cfg = TrainConfig { epochs: 1, batch_size: 1, lr };
        let u = local_update(&p, &ds.view(), ClientId(3), &cfg, 0).unwrap();

        // Closed form: z = x W + b, p = softmax(z), dW[j][c] = x_j (p_c - [c = y]).
        let w = p.values();
        let z: Vec<f64> = (0..3)
            .map(|c| (0..3).map(|j| x[(0, j)] * w[j * 3 + c]).sum::<f64>() + w[9 + c])
            .collect();
        let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
        let s: f64 = e.iter().sum();
        let probs: Vec<f64> = e.iter().map(|v| v / s).collect();
        for c in 0..3 {
            let r = probs[c] - if c == 1 { 1.0 } else { 0.0 };
            for j in 0..3 {
                assert!((u.delta[j * 3 + c] - (-lr * x[(0, j)] * r)).abs() < 1e-12);
            }
            assert!((u.delta[9 + c] - (-lr * r)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_in_seed() {
        let ds = generate_synthetic_dataset(3, 20, 4, 3.0, 2).unwrap();
        let p = init_model(&[4, 6, 3], 4, 0).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 7, lr: 0.1 };
        let a = local_update(&p, &ds.view(), ClientId(1), &cfg, 42).unwrap();
        let b = local_update(&p, &ds.view(), ClientId(1), &cfg, 42).unwrap();
        let c = local_update(&p, &ds.view(), ClientId(1), &cfg, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.delta, c.delta);
    }

    #[test]
    fn training_errors() {
        let ds = generate_synthetic_dataset(2, 5, 3, 4.0, 0).unwrap();
        let p = init_model(&[3, 2], 4, 0).unwrap();
        let cfg = TrainConfig::default();
        assert!(matches!(
            local_update(&p, &ds.shard(&[]), ClientId(0), &cfg, 0),
            Err(ModelError::EmptyDataset)
        ));
        let mut poisoned = ds.features().clone();
        poisoned[(0, 0)] = f64::NAN;
        let poisoned = LabeledDataset::new(poisoned, ds.labels().to_vec(), 2).unwrap();
        assert!(matches!(
            local_update(&p, &poisoned.view(), ClientId(0), &cfg, 0),
            Err(ModelError::NonFiniteLoss { .. })
        ));
        let wrong = init_model(&[4, 2], 4, 0).unwrap();
        assert!(matches!(
            local_update(&wrong, &ds.view(), ClientId(0), &cfg, 0),
            Err(ModelError::InputMismatch { .. })
        ));
    }

    #[test]
    fn softmax_rows_are_a_simplex() {
        let ds = generate_synthetic_dataset(4, 10, 5, 2.0, 3).unwrap();
        let p = init_model(&[5, 8, 4], 4, 3).unwrap();
        let probs = predict_proba(&p, ds.features().view());
        for row in probs.rows() {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn evaluate_constant_predictor_and_identity() {
        // Zero weights with a bias favouring class 2 predict 2 everywhere.
        let mut values = vec![0.0; 3 * 4 + 4];
        values[12 + 2] = 1.0;
        let p = ModelParams::from_parts(values, vec![LayerShape { inputs: 3, outputs: 4 }], 4).unwrap();
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f64);
        let ds = LabeledDataset::new(x.clone(), vec![2; 5], 4).unwrap();
        let r = evaluate(&p, &ds).unwrap();
        assert_eq!(r.global_accuracy, 1.0);
        assert_eq!(r.per_class_accuracy, vec![None, None, Some(1.0), None]);

        let mixed = LabeledDataset::new(x, vec![0, 2, 2, 1, 2], 4).unwrap();
        let r = evaluate(&p, &mixed).unwrap();
        let counts = mixed.class_counts();
        let weighted: f64 = r
            .per_class_accuracy
            .iter()
            .zip(&counts)
            .filter_map(|(a, &n)| a.map(|a| a * n as f64 / 5.0))
            .sum();
        assert!((weighted - r.global_accuracy).abs() < 1e-12);
        assert!(matches!(evaluate(&p, &mixed.subset(&[])), Err(ModelError::EmptyDataset)));
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = init_model(&[6, 5, 3], 4, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let bytes = std::fs::read(&path).unwrap();
        let header = checkpoint_header(&p);
        assert!(bytes.starts_with(header.as_bytes()));
        assert!(header.contains("layers 6x5 5x3"));
        assert_eq!(bytes.len(), header.len() + 8 * p.param_count());
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
