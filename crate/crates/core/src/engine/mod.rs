//! Training and sampling for the denoising diffusion model: stochastic
//! noise-prediction regression with Adam, early stopping on the epoch-mean
//! training loss, and iterative reverse-process sampling.

mod io;

pub use io::{read_loss_history, read_scenario_csv, write_loss_history, write_scenario_csv};

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{DenoiserModel, NetworkError};
use crate::schedule::{DiffusionSchedule, ScheduleError};
use crate::seed;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("scenario batch is empty")]
    EmptyBatch,
    #[error("training data must be normalized into [-1, 1] first")]
    NotNormalized,
    #[error("labels must be present iff the model is conditional")]
    LabelContract,
    #[error("label count {0} does not match row count {1}")]
    LabelCount(usize, usize),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid train config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad file format: {0}")]
    Format(String),
}

/// Affine map of a whole dataset onto [-1, 1].
///
/// A degenerate record (`max == min`) maps everything to zero and is flagged
/// so downstream consumers can refuse to denormalize through it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
    pub degenerate: bool,
}

impl Normalization {
    pub fn from_data(values: &Array2<f64>) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values.iter() {
            min = min.min(v);
            max = max.max(v);
        }
        Self { min, max, degenerate: !(max > min) }
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            2.0 * (v - self.min) / (self.max - self.min) - 1.0
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.degenerate {
            self.min
        } else {
            (v + 1.0) / 2.0 * (self.max - self.min) + self.min
        }
    }
}

/// Normalizes into [-1, 1] using the dataset-wide min/max, returning the
/// record needed to invert the map.
pub fn normalize(raw: &Array2<f64>) -> (Array2<f64>, Normalization) {
    let rec = Normalization::from_data(raw);
    (raw.mapv(|v| rec.apply(v)), rec)
}

/// Applies an existing normalization record to new data.
pub fn normalize_with(raw: &Array2<f64>, rec: &Normalization) -> Array2<f64> {
    raw.mapv(|v| rec.apply(v))
}

pub fn denormalize(values: &Array2<f64>, rec: &Normalization) -> Array2<f64> {
    values.mapv(|v| rec.invert(v))
}

/// A set of scenarios: one row per sequence, optional per-row condition
/// labels, and the normalization record when the values are in model units.
#[derive(Debug, Clone)]
pub struct ScenarioBatch {
    pub values: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    pub normalization: Option<Normalization>,
}

impl ScenarioBatch {
    pub fn new(values: Array2<f64>, labels: Option<Vec<usize>>) -> Result<Self, EngineError> {
        if let Some(l) = &labels {
            if l.len() != values.nrows() {
                return Err(EngineError::LabelCount(l.len(), values.nrows()));
            }
        }
        Ok(Self { values, labels, normalization: None })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn seq_len(&self) -> usize {
        self.values.ncols()
    }

    /// Normalized copy of this batch, recording the map.
    pub fn normalized(&self) -> Self {
        let (values, rec) = normalize(&self.values);
        Self { values, labels: self.labels.clone(), normalization: Some(rec) }
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).to_vec()
    }
}

/// Anything that can stand in for the denoising network in the training
/// objective and the sampler. The real implementation is [`DenoiserModel`];
/// tests inject oracles through this seam.
pub trait NoisePredictor: Sync {
    fn seq_len(&self) -> usize;
    fn conditional(&self) -> bool;
    fn predict(&self, xt: &[f64], t: usize, label: Option<usize>) -> Result<Vec<f64>, NetworkError>;
}

impl NoisePredictor for DenoiserModel {
    fn seq_len(&self) -> usize {
        self.config().seq_len
    }

    fn conditional(&self) -> bool {
        self.config().is_conditional()
    }

    fn predict(&self, xt: &[f64], t: usize, label: Option<usize>) -> Result<Vec<f64>, NetworkError> {
        self.predict_noise(xt, t, label)
    }
}

/// Optimization hyperparameters. Defaults follow the reference setup:
/// 200 epochs, batch size 4, Adam at 1e-3, patience 20.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 4, learning_rate: 1e-3, patience: 20, seed: 0 }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), EngineError> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(EngineError::BadConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(EngineError::BadConfig("learning_rate must be non-negative".into()));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return Err(EngineError::BadConfig("patience must be in 1..=epochs".into()));
        }
        Ok(())
    }
}

fn check_batch_for_training(batch: &ScenarioBatch, conditional: bool) -> Result<(), EngineError> {
    if batch.is_empty() {
        return Err(EngineError::EmptyBatch);
    }
    if batch.labels.is_some() != conditional {
        return Err(EngineError::LabelContract);
    }
    let bound = 1.0 + 1e-9;
    if batch.values.iter().any(|v| !v.is_finite() || v.abs() > bound) {
        return Err(EngineError::NotNormalized);
    }
    Ok(())
}

fn draw_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// One-sample loss: squared error summed over time steps.
fn row_loss(eps: &[f64], eps_hat: &[f64]) -> f64 {
    eps.iter().zip(eps_hat).map(|(e, p)| (e - p).powi(2)).sum()
}

/// Monte-Carlo estimate of the noise-prediction objective over one batch:
/// per row, draw `t ~ Uniform{1..T}` and `eps ~ N(0, I)`, corrupt, predict,
/// and average the summed squared error over rows.
pub fn training_loss(
    batch: &ScenarioBatch,
    predictor: &impl NoisePredictor,
    sched: &DiffusionSchedule,
    rng: &mut impl Rng,
) -> Result<f64, EngineError> {
    if batch.is_empty() {
        return Err(EngineError::EmptyBatch);
    }
    let len = batch.seq_len();
    let mut total = 0.0;
    for i in 0..batch.len() {
        let t = rng.random_range(1..=sched.steps());
        let eps = draw_noise(len, rng);
        let x0 = batch.row(i);
        let xt = sched.forward_sample(&x0, t, &eps)?;
        let label = batch.labels.as_ref().map(|l| l[i]);
        let eps_hat = predictor.predict(&xt, t, label)?;
        total += row_loss(&eps, &eps_hat);
    }
    Ok(total / batch.len() as f64)
}

/// Deterministic loss and flat parameter gradient for one fixed
/// `(x0, eps, t)` triple. This is the seam used by the optimizer and by
/// finite-difference gradient checks.
pub fn sample_loss_and_grad(
    model: &DenoiserModel,
    x0: &[f64],
    eps: &[f64],
    t: usize,
    label: Option<usize>,
    sched: &DiffusionSchedule,
) -> Result<(f64, Vec<f64>), EngineError> {
    let xt = sched.forward_sample(x0, t, eps)?;
    let (eps_hat, cache) = model.forward_cached(&xt, t, label)?;
    let loss = row_loss(eps, &eps_hat);
    let d_eps: Vec<f64> = eps_hat.iter().zip(eps).map(|(p, e)| 2.0 * (p - e)).collect();
    let grads = model.backward(&cache, &d_eps);
    Ok((loss, grads.to_vec()))
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    fn new(lr: f64, n: usize) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// Cosine decay from the initial rate down to a twentieth of it.
    fn set_epoch(&mut self, initial_lr: f64, epoch: usize, total_epochs: usize) {
        let floor = initial_lr / 20.0;
        let progress = epoch as f64 / total_epochs.max(1) as f64;
        self.lr = floor + 0.5 * (initial_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos());
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Clips to global L2 norm 1.0; small-batch gradients spike occasionally.
fn clip_global_norm(grads: &mut [f64]) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > 1.0 {
        let s = 1.0 / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

pub struct TrainOutcome {
    pub model: DenoiserModel,
    /// Epoch-mean training loss, one entry per completed epoch.
    pub loss_history: Vec<f64>,
}

/// Trains the denoiser by stochastic gradient descent on the
/// noise-prediction loss (Adam with cosine decay of the initial rate).
/// Stops at the epoch limit or once the epoch-mean loss has not improved
/// for `patience` consecutive epochs, and returns the parameters of the
/// best epoch seen. Fails with the offending epoch if the loss turns
/// non-finite.
pub fn train(
    batch: &ScenarioBatch,
    model: DenoiserModel,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, EngineError> {
    cfg.validate()?;
    check_batch_for_training(batch, model.config().is_conditional())?;
    let mut model = model;
    let n_rows = batch.len();
    let seq_len = batch.seq_len();
    if seq_len != model.config().seq_len {
        return Err(EngineError::Network(NetworkError::LengthMismatch {
            expected: model.config().seq_len,
            got: seq_len,
        }));
    }

    let mut rng = seed::rng(cfg.seed);
    let mut flat = model.param_vector();
    let mut adam = Adam::new(cfg.learning_rate, flat.len());
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_flat = flat.clone();
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.epochs {
        adam.set_epoch(cfg.learning_rate, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..n_rows).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            // Draw corruption variables sequentially so the run is
            // reproducible regardless of worker count.
            let draws: Vec<(usize, usize, Vec<f64>)> = chunk
                .iter()
                .map(|&row| {
                    let t = rng.random_range(1..=sched.steps());
                    let eps = draw_noise(seq_len, &mut rng);
                    (row, t, eps)
                })
                .collect();

            let results: Vec<Result<(f64, Vec<f64>), EngineError>> = draws
                .par_iter()
                .map(|(row, t, eps)| {
                    let x0 = batch.row(*row);
                    let label = batch.labels.as_ref().map(|l| l[*row]);
                    sample_loss_and_grad(&model, &x0, eps, *t, label, sched)
                })
                .collect();

            let mut grad_sum = vec![0.0; flat.len()];
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grad) = r?;
                batch_loss += loss;
                for (a, g) in grad_sum.iter_mut().zip(&grad) {
                    *a += g;
                }
            }
            if !batch_loss.is_finite() {
                return Err(EngineError::Diverged { epoch: epoch + 1 });
            }
            epoch_loss += batch_loss;

            let inv = 1.0 / chunk.len() as f64;
            grad_sum.iter_mut().for_each(|g| *g *= inv);
            clip_global_norm(&mut grad_sum);
            adam.update(&mut flat, &grad_sum);
            if flat.iter().any(|p| !p.is_finite()) {
                return Err(EngineError::Diverged { epoch: epoch + 1 });
            }
            model.set_param_vector(&flat)?;
        }

        let epoch_loss = epoch_loss / n_rows as f64;
        history.push(epoch_loss);
        if epoch_loss < best {
            best = epoch_loss;
            best_flat.copy_from_slice(&flat);
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                break;
            }
        }
    }

    model.set_param_vector(&best_flat)?;
    Ok(TrainOutcome { model, loss_history: history })
}

/// Draws `n` scenarios by running the reverse chain from pure noise.
/// Each scenario owns an independent RNG stream derived from
/// `(sample_seed, index)`, so jobs parallelize without changing results.
///
/// Final sequences are clamped to the normalization domain [-1, 1] before
/// de-normalizing: values outside it would extrapolate the affine map into
/// physically impossible rates, and a single runaway trajectory would
/// otherwise distort every pooled-range analysis downstream.
pub fn sample(
    model: &impl NoisePredictor,
    sched: &DiffusionSchedule,
    n: usize,
    label: Option<usize>,
    norm: &Normalization,
    sample_seed: u64,
) -> Result<ScenarioBatch, EngineError> {
    if n == 0 {
        return Err(EngineError::EmptyBatch);
    }
    match (model.conditional(), label) {
        (true, None) => return Err(EngineError::Network(NetworkError::LabelRequired)),
        (false, Some(_)) => return Err(EngineError::Network(NetworkError::LabelUnexpected)),
        _ => {}
    }
    let len = model.seq_len();

    let rows: Vec<Result<Vec<f64>, EngineError>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::stream_rng(sample_seed, i as u64);
            let mut x = draw_noise(len, &mut rng);
            for t in (1..=sched.steps()).rev() {
                let eps_hat = model.predict(&x, t, label)?;
                let z = if t > 1 { draw_noise(len, &mut rng) } else { vec![0.0; len] };
                x = sched.reverse_step(&x, &eps_hat, t, &z)?;
            }
            x.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
            Ok(x)
        })
        .collect();

    let mut values = Array2::zeros((n, len));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        values.row_mut(i).assign(&ndarray::ArrayView1::from(&row[..]));
    }
    let values = denormalize(&values, norm);
    Ok(ScenarioBatch {
        values,
        labels: label.map(|l| vec![l; n]),
        normalization: None,
    })
}

/// Mean sequence of a batch (used by conditional-separation checks).
pub fn mean_row(values: &Array2<f64>) -> Vec<f64> {
    let n = values.nrows().max(1) as f64;
    values.sum_axis(Axis(0)).mapv(|v| v / n).to_vec()
}
