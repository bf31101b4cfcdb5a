//! Shared linear forecaster: one `T x S` map applied to every sensor's
//! normalized input window, trained by mini-batch SGD with momentum.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::losses::{BatchShape, LossSpec, PredBatch};
use crate::metrics::ForecastSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::mae(),
            epochs: 100,
            // 12 x 325 sensors stays under the balanced-MSE candidate cap
            batch_size: 12,
            learning_rate: 1e-2,
            momentum: 0.9,
            seed: 0,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::invalid("epochs, batch_size and early_stop_patience must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForecaster {
    pub input_len: usize,
    pub horizon: usize,
    /// Row-major `horizon x input_len`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub norm: NormStats,
}

impl LinearForecaster {
    pub fn zeros(input_len: usize, horizon: usize, norm: NormStats) -> Self {
        Self {
            input_len,
            horizon,
            weights: vec![0.0; horizon * input_len],
            bias: vec![0.0; horizon],
            norm,
        }
    }

    fn check(&self, data: &WindowedDataset) -> Result<()> {
        if data.input_len() != self.input_len || data.horizon_len() != self.horizon {
            return Err(Error::ShapeMismatch(format!(
                "model is {}->{} steps, dataset {}->{}",
                self.input_len,
                self.horizon,
                data.input_len(),
                data.horizon_len()
            )));
        }
        Ok(())
    }

    /// Normalized predictions for one sample, laid out `n_sensors x horizon`.
    fn forward(&self, x: &[f64], n_sensors: usize, out: &mut [f64]) {
        let (s_len, t_len) = (self.input_len, self.horizon);
        for d in 0..n_sensors {
            for t in 0..t_len {
                let w = &self.weights[t * s_len..(t + 1) * s_len];
                let mut acc = self.bias[t];
                for s in 0..s_len {
                    acc += w[s] * x[s * n_sensors + d];
                }
                out[d * t_len + t] = acc;
            }
        }
    }
}

/// Normalized input with missing entries imputed as 0 (the training mean).
fn normalized_input(data: &WindowedDataset, i: usize, norm: &NormStats, out: &mut Vec<f64>) {
    let panel = data.panel();
    out.clear();
    out.extend(data.sample(i).input.iter().map(|&v| {
        if panel.is_missing(v) {
            0.0
        } else {
            norm.apply(v)
        }
    }));
}

/// Normalized targets of one sample in `n_sensors x horizon` order plus mask.
fn normalized_target(data: &WindowedDataset, i: usize, norm: &NormStats, y: &mut [f64], m: &mut [bool]) {
    let panel = data.panel();
    let (d_len, t_len) = (data.n_sensors(), data.horizon_len());
    let target = data.sample(i).target;
    for t in 0..t_len {
        for d in 0..d_len {
            let v = target[t * d_len + d];
            let k = d * t_len + t;
            m[k] = !panel.is_missing(v);
            y[k] = if m[k] { norm.apply(v) } else { 0.0 };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Trained model plus the run that produced it; this is the model file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: LinearForecaster,
    pub config: TrainConfig,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Working buffers for one mini-batch.
struct BatchBuf {
    inputs: Vec<Vec<f64>>,
    pred: Vec<f64>,
    target: Vec<f64>,
    mask: Vec<bool>,
}

impl BatchBuf {
    fn new() -> Self {
        Self {
            inputs: Vec::new(),
            pred: Vec::new(),
            target: Vec::new(),
            mask: Vec::new(),
        }
    }

    /// Fills the buffers for `idx` and returns the batch, or `None` when every
    /// target in it is missing.
    fn load(&mut self, model: &LinearForecaster, data: &WindowedDataset, idx: &[usize]) -> Result<Option<PredBatch>> {
        let d_len = data.n_sensors();
        let per = d_len * model.horizon;
        let n = idx.len() * per;
        self.inputs.resize_with(idx.len(), Vec::new);
        self.pred.resize(n, 0.0);
        self.target.resize(n, 0.0);
        self.mask.resize(n, false);
        for (b, &i) in idx.iter().enumerate() {
            normalized_input(data, i, &model.norm, &mut self.inputs[b]);
            model.forward(&self.inputs[b], d_len, &mut self.pred[b * per..(b + 1) * per]);
            normalized_target(
                data,
                i,
                &model.norm,
                &mut self.target[b * per..(b + 1) * per],
                &mut self.mask[b * per..(b + 1) * per],
            );
        }
        if !self.mask.iter().any(|&m| m) {
            return Ok(None);
        }
        let shape = BatchShape::new(idx.len(), d_len, model.horizon);
        PredBatch::new(shape, self.pred.clone(), self.target.clone(), self.mask.clone()).map(Some)
    }
}

/// Mean batch loss over `data` in index order; batches without targets are skipped.
fn dataset_loss(model: &LinearForecaster, data: &WindowedDataset, loss: &LossSpec, batch_size: usize) -> Result<f64> {
    let mut buf = BatchBuf::new();
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in idx.chunks(batch_size) {
        if let Some(batch) = buf.load(model, data, chunk)? {
            sum += loss.evaluate(&batch)?.value;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoValidTargets);
    }
    Ok(sum / count as f64)
}

/// Trains from zero weights; keeps the parameters of the epoch with the lowest
/// validation loss (first one on ties) and stops after `early_stop_patience`
/// epochs without improvement.
pub fn train(
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    norm: NormStats,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("training and validation sets must be non-empty"));
    }
    let (s_len, t_len, d_len) = (train_set.input_len(), train_set.horizon_len(), train_set.n_sensors());
    if val_set.input_len() != s_len || val_set.horizon_len() != t_len || val_set.n_sensors() != d_len {
        return Err(Error::ShapeMismatch("training and validation windows differ in shape".into()));
    }

    let mut model = LinearForecaster::zeros(s_len, t_len, norm);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut vel_w = vec![0.0; model.weights.len()];
    let mut vel_b = vec![0.0; t_len];
    let mut grad_w = vec![0.0; model.weights.len()];
    let mut grad_b = vec![0.0; t_len];
    let mut buf = BatchBuf::new();
    let per = d_len * t_len;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let Some(batch) = buf.load(&model, train_set, chunk)? else {
                continue;
            };
            let out = config.loss.evaluate(&batch)?;
            if !out.value.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += out.value;
            batches += 1;

            grad_w.iter_mut().for_each(|g| *g = 0.0);
            grad_b.iter_mut().for_each(|g| *g = 0.0);
            for (b, x) in buf.inputs.iter().take(chunk.len()).enumerate() {
                let g = &out.grad[b * per..(b + 1) * per];
                for d in 0..d_len {
                    for t in 0..t_len {
                        let gt = g[d * t_len + t];
                        if gt == 0.0 {
                            continue;
                        }
                        grad_b[t] += gt;
                        let row = &mut grad_w[t * s_len..(t + 1) * s_len];
                        for s in 0..s_len {
                            row[s] += gt * x[s * d_len + d];
                        }
                    }
                }
            }
            for ((w, v), g) in model.weights.iter_mut().zip(&mut vel_w).zip(&grad_w) {
                *v = config.momentum * *v + g;
                *w -= config.learning_rate * *v;
            }
            for ((w, v), g) in model.bias.iter_mut().zip(&mut vel_b).zip(&grad_b) {
                *v = config.momentum * *v + g;
                *w -= config.learning_rate * *v;
            }
        }
        if batches == 0 {
            return Err(Error::NoValidTargets);
        }
        let train_loss = sum / batches as f64;
        let val_loss = dataset_loss(&model, val_set, &config.loss, config.batch_size)?;
        if !(train_loss.is_finite() && val_loss.is_finite()) || model.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= config.early_stop_patience {
            break;
        }
    }

    Ok(TrainedModel {
        model: best,
        config: config.clone(),
        history,
        best_epoch,
    })
}

/// Denormalized forecasts for every window of `data`.
pub fn predict(model: &LinearForecaster, data: &WindowedDataset) -> Result<ForecastSet> {
    model.check(data)?;
    let (t_len, d_len) = (model.horizon, data.n_sensors());
    let mut x = Vec::new();
    let mut out = vec![0.0; d_len * t_len];
    let mut values = Vec::with_capacity(data.len() * t_len * d_len);
    for i in 0..data.len() {
        normalized_input(data, i, &model.norm, &mut x);
        model.forward(&x, d_len, &mut out);
        for t in 0..t_len {
            for d in 0..d_len {
                values.push(model.norm.invert(out[d * t_len + t]));
            }
        }
    }
    ForecastSet::new(t_len, d_len, data.target_starts().to_vec(), values)
}

/// Loss of `model` on `data` under `loss`, batched like validation.
pub fn evaluate_loss(model: &LinearForecaster, data: &WindowedDataset, loss: &LossSpec, batch_size: usize) -> Result<f64> {
    model.check(data)?;
    dataset_loss(model, data, loss, batch_size.max(1))
}
