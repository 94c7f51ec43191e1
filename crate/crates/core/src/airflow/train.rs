//! Supervised training of the airflow regressor with Adam on the MSE loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{features, FeatureMask, LstmRegressor, FEATURES};
use super::network::{backward, forward, Architecture, Workspace};
use super::AirflowError;
use crate::geom::{Mat3, Vec3};
use crate::sim::SensorLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Multiplies the learning rate after every epoch.
    pub lr_decay: f64,
    /// Fraction of every log (its tail) held out for validation.
    pub validation_fraction: f64,
    pub feature_mask: FeatureMask,
    pub architecture: Architecture,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 20,
            lr_decay: 0.92,
            validation_fraction: 0.2,
            feature_mask: FeatureMask::FULL,
            architecture: Architecture::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), AirflowError> {
        let bad = |m: &str| Err(AirflowError::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.architecture.input_dim != FEATURES {
            return bad("architecture input size must match the sensor features");
        }
        Ok(())
    }
}

/// Sample rows plus the windows (by last index) that may be cut from them.
#[derive(Clone, Debug, Default)]
pub struct WindowDataset {
    pub samples: Vec<[f64; FEATURES]>,
    pub targets: Vec<Vec3>,
    /// Index of the last sample of each window; windows never cross logs.
    pub windows: Vec<usize>,
    pub seq_len: usize,
}

impl WindowDataset {
    pub fn new(seq_len: usize) -> Self {
        Self { seq_len, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn window(&self, i: usize) -> &[[f64; FEATURES]] {
        let end = self.windows[i];
        &self.samples[end + 1 - self.seq_len..=end]
    }

    pub fn target(&self, i: usize) -> Vec3 {
        self.targets[self.windows[i]]
    }

    /// Appends a contiguous run of samples and every full window inside it.
    pub fn push_segment(&mut self, samples: &[[f64; FEATURES]], targets: &[Vec3]) {
        assert_eq!(samples.len(), targets.len());
        let base = self.samples.len();
        self.samples.extend_from_slice(samples);
        self.targets.extend_from_slice(targets);
        for end in self.seq_len.saturating_sub(1)..samples.len() {
            self.windows.push(base + end);
        }
    }

    fn feature_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.samples.len().max(1) as f64;
        let mut mean = vec![0.0; FEATURES];
        for s in &self.samples {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; FEATURES];
        for s in &self.samples {
            for ((v, x), m) in std.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        for v in std.iter_mut() {
            *v = if *v > 1e-18 { v.sqrt() } else { 1.0 };
        }
        (mean, std)
    }
}

/// Airflow-rate samples of a log with their relative-airflow targets
/// `-R^T v`, i.e. the log is assumed to be recorded in still air.
pub fn log_samples(log: &SensorLog) -> (Vec<[f64; FEATURES]>, Vec<Vec3>) {
    log.rows
        .iter()
        .step_by(log.meta.airflow_decimation)
        .map(|r| (features(r), -(r.truth.attitude.matrix().transpose() * r.truth.velocity)))
        .unzip()
}

/// Splits every log chronologically into training head and validation tail.
pub fn build_datasets(
    logs: &[SensorLog],
    seq_len: usize,
    validation_fraction: f64,
) -> Result<(WindowDataset, WindowDataset), AirflowError> {
    if logs.is_empty() {
        return Err(AirflowError::EmptyDataset);
    }
    let mut train = WindowDataset::new(seq_len);
    let mut val = WindowDataset::new(seq_len);
    for log in logs {
        let (x, y) = log_samples(log);
        let split = ((1.0 - validation_fraction) * x.len() as f64).round() as usize;
        train.push_segment(&x[..split], &y[..split]);
        val.push_segment(&x[split..], &y[split..]);
    }
    if train.is_empty() || val.is_empty() {
        return Err(AirflowError::EmptyDataset);
    }
    Ok((train, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Parameters of the epoch with the lowest validation loss.
    pub model: LstmRegressor,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn best_validation_loss(&self) -> f64 {
        self.history[self.best_epoch].validation_loss
    }
}

/// Mean squared error over `indices` and its gradient, accumulated into
/// `grad` (which is overwritten).
pub fn loss_and_gradient(
    model: &LstmRegressor,
    data: &WindowDataset,
    indices: &[usize],
    grad: &mut [f64],
) -> f64 {
    grad.fill(0.0);
    let mut ws = Workspace::new(model.layout());
    let mut buf = Vec::new();
    let scale = 1.0 / (indices.len() * 3) as f64;
    let mut loss = 0.0;
    let mut out = [0.0; 3];
    for &i in indices {
        model.prepare(data.window(i), &mut buf);
        forward(model.layout(), &model.params, &buf, &mut ws, &mut out);
        let target = data.target(i);
        let mut d_out = [0.0; 3];
        for k in 0..3 {
            let e = out[k] - target[k];
            loss += e * e * scale;
            d_out[k] = 2.0 * e * scale;
        }
        backward(model.layout(), &model.params, &mut ws, &d_out, grad);
    }
    loss
}

/// Mean squared error per output component.
pub fn evaluate_mse(model: &LstmRegressor, data: &WindowDataset) -> f64 {
    let mut ws = Workspace::new(model.layout());
    let mut buf = Vec::new();
    let total: f64 = (0..data.len())
        .map(|i| (model.predict_with(data.window(i), &mut ws, &mut buf) - data.target(i)).norm_squared())
        .sum();
    total / (3 * data.len().max(1)) as f64
}

/// Empirical covariance of the prediction residuals, with a small floor on
/// the diagonal so the result is always positive definite.
pub fn identify_measurement_cov(model: &LstmRegressor, data: &WindowDataset) -> Mat3 {
    let mut ws = Workspace::new(model.layout());
    let mut buf = Vec::new();
    let residuals: Vec<Vec3> = (0..data.len())
        .map(|i| model.predict_with(data.window(i), &mut ws, &mut buf) - data.target(i))
        .collect();
    let n = residuals.len().max(1) as f64;
    let mean = residuals.iter().sum::<Vec3>() / n;
    let mut cov = residuals.iter().map(|r| (r - mean) * (r - mean).transpose()).sum::<Mat3>() / n;
    cov = (cov + cov.transpose()) * 0.5 + Mat3::identity() * 1e-6;
    cov
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainingConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Trains on prepared window sets.
pub fn train_windows(
    train: &WindowDataset,
    validation: &WindowDataset,
    config: &TrainingConfig,
) -> Result<TrainedModel, AirflowError> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(AirflowError::EmptyDataset);
    }
    if train.seq_len != config.architecture.seq_len || validation.seq_len != config.architecture.seq_len {
        return Err(AirflowError::InvalidConfig("dataset window length differs from the architecture".into()));
    }
    let mut model = LstmRegressor::initialized(config.architecture, config.feature_mask, config.seed);
    let (mean, std) = train.feature_stats();
    model.set_normalization(mean, std)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_ba7c4);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut grad = vec![0.0; model.params.len()];
    let mut adam = Adam::new(model.params.len());
    let mut lr = config.learning_rate;
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Vec<f64>, f64)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let loss = loss_and_gradient(&model, train, batch, &mut grad);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                if let Some((_, params, _)) = &best {
                    model.params.copy_from_slice(params);
                }
                return Err(AirflowError::Diverged { epoch, checkpoint: Box::new(model), history });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut model.params, &grad, lr, config);
        }
        let validation_loss = evaluate_mse(&model, validation);
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            validation_loss,
            learning_rate: lr,
        });
        log::debug!("epoch {epoch}: train {:.3e} validation {validation_loss:.3e}", epoch_loss / train.len() as f64);
        if best.as_ref().is_none_or(|(_, _, v)| validation_loss < *v) {
            best = Some((epoch, model.params.clone(), validation_loss));
        }
        lr *= config.lr_decay;
    }
    let (best_epoch, params, _) = best.expect("at least one epoch");
    model.params = params;
    let cov = identify_measurement_cov(&model, validation);
    model.set_measurement_cov(cov)?;
    Ok(TrainedModel { model, history, best_epoch })
}

/// Trains the regressor on still-air logs.
pub fn lstm_train(logs: &[SensorLog], config: &TrainingConfig) -> Result<TrainedModel, AirflowError> {
    config.validate()?;
    let (train, val) = build_datasets(logs, config.architecture.seq_len, config.validation_fraction)?;
    train_windows(&train, &val, config)
}
