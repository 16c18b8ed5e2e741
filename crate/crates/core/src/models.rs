//! Per-modality classifiers.
//!
//! A [`ModalityModel`] owns a flat parameter vector laid out layer by layer,
//! weights before biases, weights row-major with one row per output unit.
//! Models are plain values: training returns a new model and never mutates
//! its input.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Bytes charged per parameter when a model is uploaded (32-bit floats).
pub const BYTES_PER_PARAM: usize = 4;

const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Arch {
    LinearSoftmax,
    /// One ReLU hidden layer.
    Mlp1 { hidden_units: usize },
}

impl Default for Arch {
    fn default() -> Self {
        Arch::LinearSoftmax
    }
}

impl Arch {
    pub fn param_count(&self, input_dim: usize, num_classes: usize) -> usize {
        match *self {
            Arch::LinearSoftmax => (input_dim + 1) * num_classes,
            Arch::Mlp1 { hidden_units } => {
                (input_dim + 1) * hidden_units + (hidden_units + 1) * num_classes
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityModel {
    pub modality_id: usize,
    pub arch: Arch,
    pub params: Vec<f64>,
    pub input_dim: usize,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// Mean per-sample cross-entropy over the last epoch's batches.
    pub final_loss: f64,
    pub epochs_run: usize,
    pub samples_seen: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.1,
        }
    }
}

/// Builds a model with parameters drawn uniformly from (-0.05, 0.05).
pub fn init_model(
    arch: Arch,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModalityModel> {
    if input_dim == 0 {
        return Err(Error::Dimension("input_dim must be at least 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::Dimension(format!(
            "num_classes must be at least 2, got {num_classes}"
        )));
    }
    if let Arch::Mlp1 { hidden_units: 0 } = arch {
        return Err(Error::Dimension("hidden_units must be at least 1".into()));
    }
    let mut rng = rng::stream(seed, &[tag::INIT]);
    let params = (0..arch.param_count(input_dim, num_classes))
        .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
        .collect();
    Ok(ModalityModel {
        modality_id: 0,
        arch,
        params,
        input_dim,
        num_classes,
    })
}

/// Cross-entropy of one row given its logits. Uses the shifted log-sum-exp.
pub(crate) fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    max + sum.ln() - logits[label]
}

pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
}

/// Index of the largest score; ties resolve to the lowest index.
pub(crate) fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Dense layer `out = W x + b` where `layer` holds `W` (rows = outputs) then `b`.
pub(crate) fn dense(layer: &[f64], input: &[f64], out: &mut [f64]) {
    let (n_in, n_out) = (input.len(), out.len());
    let (w, b) = layer.split_at(n_in * n_out);
    for (o, slot) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        *slot = b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
    }
}

/// Accumulates the dense layer gradient for upstream gradient `grad_out`.
pub(crate) fn dense_backward(grad: &mut [f64], input: &[f64], grad_out: &[f64]) {
    let n_in = input.len();
    let (gw, gb) = grad.split_at_mut(n_in * grad_out.len());
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (slot, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
            *slot += g * x;
        }
        gb[o] += g;
    }
}

/// Scratch space reused across rows.
struct Workspace {
    hidden: Vec<f64>,
    logits: Vec<f64>,
    grad_hidden: Vec<f64>,
}

impl ModalityModel {
    pub fn with_modality_id(mut self, modality_id: usize) -> Self {
        self.modality_id = modality_id;
        self
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn byte_size(&self) -> usize {
        self.params.len() * BYTES_PER_PARAM
    }

    fn workspace(&self) -> Workspace {
        let hidden = match self.arch {
            Arch::LinearSoftmax => 0,
            Arch::Mlp1 { hidden_units } => hidden_units,
        };
        Workspace {
            hidden: vec![0.0; hidden],
            logits: vec![0.0; self.num_classes],
            grad_hidden: vec![0.0; hidden],
        }
    }

    fn split_hidden(&self, h: usize) -> (&[f64], &[f64]) {
        self.params.split_at((self.input_dim + 1) * h)
    }

    fn forward(&self, row: &[f64], ws: &mut Workspace) {
        match self.arch {
            Arch::LinearSoftmax => dense(&self.params, row, &mut ws.logits),
            Arch::Mlp1 { hidden_units } => {
                let (first, second) = self.split_hidden(hidden_units);
                dense(first, row, &mut ws.hidden);
                for v in ws.hidden.iter_mut() {
                    *v = v.max(0.0);
                }
                dense(second, &ws.hidden, &mut ws.logits);
            }
        }
    }

    /// Adds this row's cross-entropy gradient into `grad`; returns the row loss.
    fn accumulate_gradient(
        &self,
        row: &[f64],
        label: usize,
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> f64 {
        self.forward(row, ws);
        let loss = cross_entropy(&ws.logits, label);
        softmax_in_place(&mut ws.logits);
        ws.logits[label] -= 1.0;
        match self.arch {
            Arch::LinearSoftmax => dense_backward(grad, row, &ws.logits),
            Arch::Mlp1 { hidden_units } => {
                let split = (self.input_dim + 1) * hidden_units;
                let (g_first, g_second) = grad.split_at_mut(split);
                dense_backward(g_second, &ws.hidden, &ws.logits);
                let w2 = &self.params[split..split + hidden_units * self.num_classes];
                for j in 0..hidden_units {
                    ws.grad_hidden[j] = if ws.hidden[j] > 0.0 {
                        (0..self.num_classes)
                            .map(|c| w2[c * hidden_units + j] * ws.logits[c])
                            .sum()
                    } else {
                        0.0
                    };
                }
                dense_backward(g_first, row, &ws.grad_hidden);
            }
        }
        loss
    }

    fn check_width(&self, features: &ArrayView2<'_, f64>) -> Result<()> {
        if features.ncols() != self.input_dim {
            return Err(Error::Dimension(format!(
                "modality {} expects {} features, got {}",
                self.modality_id,
                self.input_dim,
                features.ncols()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, n: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != n {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::Data(format!(
                "label {bad} outside [0, {})",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Class scores (logits) for every row.
    pub fn scores(&self, features: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        self.check_width(&features)?;
        let mut ws = self.workspace();
        Ok(features
            .rows()
            .into_iter()
            .map(|row| {
                self.forward(&row.to_vec(), &mut ws);
                ws.logits.clone()
            })
            .collect())
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        self.check_width(&features)?;
        let mut ws = self.workspace();
        let mut buf = vec![0.0; self.input_dim];
        Ok(features
            .rows()
            .into_iter()
            .map(|row| {
                buf.iter_mut().zip(row.iter()).for_each(|(b, x)| *b = *x);
                self.forward(&buf, &mut ws);
                argmax(&ws.logits)
            })
            .collect())
    }

    /// Mean softmax cross-entropy. An empty set has loss 0.
    pub fn eval_loss(&self, features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        self.check_width(&features)?;
        self.check_labels(features.nrows(), labels)?;
        if labels.is_empty() {
            return Ok(0.0);
        }
        let mut ws = self.workspace();
        let mut buf = vec![0.0; self.input_dim];
        let mut total = 0.0;
        for (row, &y) in features.rows().into_iter().zip(labels) {
            buf.iter_mut().zip(row.iter()).for_each(|(b, x)| *b = *x);
            self.forward(&buf, &mut ws);
            total += cross_entropy(&ws.logits, y);
        }
        Ok(total / labels.len() as f64)
    }

    /// Minibatch SGD on softmax cross-entropy. Batch order is reshuffled each
    /// epoch from a stream keyed on `(seed, epoch)`.
    pub fn train_local(
        &self,
        features: ArrayView2<'_, f64>,
        labels: &[usize],
        params: &TrainParams,
        seed: u64,
    ) -> Result<(ModalityModel, TrainOutcome)> {
        self.check_width(&features)?;
        let n = features.nrows();
        self.check_labels(n, labels)?;
        if n == 0 {
            return Err(Error::Data("cannot train on an empty dataset".into()));
        }
        if params.batch_size == 0 {
            return Err(Error::Data("batch_size must be at least 1".into()));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("features contain non-finite values".into()));
        }
        if params.epochs == 0 {
            let final_loss = self.eval_loss(features, labels)?;
            return Ok((
                self.clone(),
                TrainOutcome {
                    final_loss,
                    epochs_run: 0,
                    samples_seen: 0,
                },
            ));
        }

        let rows: Vec<Vec<f64>> = features.rows().into_iter().map(|r| r.to_vec()).collect();
        let mut model = self.clone();
        let mut ws = model.workspace();
        let mut grad = vec![0.0; model.params.len()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut final_loss = 0.0;
        let mut samples_seen = 0;

        for epoch in 0..params.epochs {
            let mut rng = rng::stream(seed, &[tag::TRAIN, epoch as u64]);
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(params.batch_size) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut batch_loss = 0.0;
                for &i in batch {
                    batch_loss += model.accumulate_gradient(&rows[i], labels[i], &mut ws, &mut grad);
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        detail: format!("batch loss is {batch_loss}"),
                    });
                }
                epoch_loss += batch_loss;
                let step = params.learning_rate / batch.len() as f64;
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= step * g;
                }
                if model.params.iter().any(|p| !p.is_finite()) {
                    return Err(Error::Divergence {
                        epoch,
                        detail: "parameters became non-finite".into(),
                    });
                }
                samples_seen += batch.len();
            }
            final_loss = epoch_loss / n as f64;
        }

        Ok((
            model,
            TrainOutcome {
                final_loss,
                epochs_run: params.epochs,
                samples_seen,
            },
        ))
    }

    pub fn same_shape(&self, other: &ModalityModel) -> bool {
        self.arch == other.arch
            && self.input_dim == other.input_dim
            && self.num_classes == other.num_classes
            && self.params.len() == other.params.len()
    }
}

/// Elementwise `Σ weights[i] · models[i].params`. Weights must be nonnegative
/// and sum to 1 within 1e-9.
pub fn weighted_sum(models: &[&ModalityModel], weights: &[f64]) -> Result<ModalityModel> {
    let first = models
        .first()
        .ok_or_else(|| Error::Aggregation("no models to aggregate".into()))?;
    if models.len() != weights.len() {
        return Err(Error::Weights(format!(
            "{} models but {} weights",
            models.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Weights("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Weights(format!("weights sum to {total}, expected 1")));
    }
    if let Some(bad) = models.iter().find(|m| !m.same_shape(first)) {
        return Err(Error::Aggregation(format!(
            "architecture mismatch: {:?} ({}x{}) vs {:?} ({}x{})",
            first.arch, first.input_dim, first.num_classes, bad.arch, bad.input_dim, bad.num_classes
        )));
    }
    let mut params = vec![0.0; first.params.len()];
    for (model, &w) in models.iter().zip(weights) {
        for (acc, p) in params.iter_mut().zip(&model.params) {
            *acc += w * p;
        }
    }
    Ok(ModalityModel {
        params,
        ..(*first).clone()
    })
}
