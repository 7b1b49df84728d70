//! Adam, the halving learning-rate schedule, early stopping and the
//! training loop.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Batch, NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, ModelConfig};
use crate::params::{ParamStore, Session};
use crate::rng::{stream_rng, RngState, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Maximum global gradient L2 norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            epochs: 6,
            patience: 3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 1,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, reason: &str| Err(Error::InvalidConfig { key, reason: reason.into() });
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0", "must be positive and finite");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience", "must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam", "betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("adam", "eps must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return bad("grad_clip", "must be positive and finite");
            }
        }
        Ok(())
    }

    /// Learning rate for zero-based epoch `epoch`: `lr0 · 2^(−epoch)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        learning_rate(self.lr0, epoch)
    }
}

/// `lr0 · 2^(−epoch)`, exact in binary floating point.
pub fn learning_rate(lr0: f64, epoch: usize) -> f64 {
    libm::ldexp(lr0, -(epoch.min(i32::MAX as usize) as i32))
}

/// Stops after `patience` consecutive epochs without a new best
/// validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    epochs_seen: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: None, epochs_seen: 0, stale: 0 }
    }

    /// Records the next epoch's validation loss. Returns `true` when
    /// training should stop.
    pub fn observe(&mut self, val_loss: f64) -> bool {
        self.epochs_seen += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(self.epochs_seen);
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }

    pub fn is_new_best(&self) -> bool {
        self.best_epoch == Some(self.epochs_seen)
    }

    /// One-based epoch of the best loss so far.
    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| alloc::vec![0.0; p.numel()]).collect();
        AdamState { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", "parameter, gradient and state counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() || p.numel() != state.m[i].len() {
            return Err(Error::shape("adam_step", alloc::format!("tensor {i}: {} values, {} gradients", p.numel(), g.len())));
        }
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
    let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().flatten().map(|g| g * g).sum());
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Positions of the shuffle and dropout streams after training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainRng {
    pub shuffle: RngState,
    pub dropout: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the best validation loss.
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub rng: TrainRng,
}

/// Everything needed to rebuild a trained model and its preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub norm: NormStats,
    pub history: Vec<EpochRecord>,
    pub rng: TrainRng,
    pub columns: Vec<String>,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Forecaster> {
        Forecaster::from_params(self.config.clone(), self.params.clone())
    }
}

/// Mean squared error over every element, in eval mode, batched.
pub fn dataset_loss(model: &Forecaster, samples: &[WindowSample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation windows"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch = Batch::from_samples(chunk)?;
        let pred = model.predict(&batch)?;
        sum += pred.data().iter().zip(batch.y.data()).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
        count += pred.numel();
    }
    Ok(sum / count as f64)
}

/// Mini-batch training with a halving learning rate and early stopping.
///
/// The model ends holding the best-validation parameters. `observer`, if
/// given, sees each epoch record as soon as it is complete.
pub fn train(
    model: &mut Forecaster,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset("training windows"));
    }
    if val_set.is_empty() {
        return Err(Error::EmptyDataset("validation windows"));
    }
    let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);
    let mut adam = AdamState::new(model.params().tensors());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;
    let p_drop = model.config().dropout;

    for e in 0..cfg.epochs {
        let epoch = e + 1;
        let lr = cfg.learning_rate(e);
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = |err: Error| match err {
                Error::NonFiniteValue { .. } => Error::NonFiniteLoss { epoch, batch: b + 1 },
                other => other,
            };
            let samples: Vec<&WindowSample> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch = Batch::from_samples(&samples)?;
            let mut s = Session::training(model.params(), p_drop, dropout_rng);
            let step = (|| {
                let pred = model.forward(&mut s, &batch)?;
                let g = s.graph();
                let y = g.constant(batch.y.clone());
                let diff = g.sub(pred, y)?;
                let sq = g.mul(diff, diff)?;
                let loss = g.mean(sq)?;
                s.backward(loss)?;
                Ok(s.graph_ref().value(loss).data()[0])
            })();
            let loss = step.map_err(non_finite)?;
            let n = batch.y.numel();
            let mut grads = s.param_grads();
            dropout_rng = s.into_dropout_rng().unwrap_or_else(|| stream_rng(cfg.seed, Stream::Dropout));
            if let Some(max) = cfg.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adam_step(model.params_mut().tensors_mut(), &grads, &mut adam, lr, cfg)?;
            if !model.params().tensors().iter().all(Tensor::is_finite) {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            loss_sum += loss * n as f64;
            loss_count += n;
        }
        let val_loss = dataset_loss(model, val_set, cfg.batch_size).map_err(|err| match err {
            Error::NonFiniteValue { .. } => Error::NonFiniteLoss { epoch, batch: 0 },
            other => other,
        })?;
        let record = EpochRecord { epoch, lr, train_loss: loss_sum / loss_count as f64, val_loss };
        history.push(record);
        if let Some(f) = observer.as_mut() {
            f(&record);
        }
        let stop = stopper.observe(val_loss);
        if stopper.is_new_best() {
            best = model.params().clone();
        }
        if stop {
            stopped_early = epoch < cfg.epochs;
            break;
        }
    }
    *model.params_mut() = best.clone();
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        stopped_early,
        rng: TrainRng {
            shuffle: RngState::capture(cfg.seed, &shuffle_rng),
            dropout: RngState::capture(cfg.seed, &dropout_rng),
        },
    })
}
