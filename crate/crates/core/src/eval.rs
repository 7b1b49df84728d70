//! Metrics, repeated-run reports and the graph-block ablation harness.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Batch, NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::forecaster::{Forecaster, ModelConfig};
use crate::train::{train, EpochRecord, TrainConfig, TrainOutcome};
use crate::tensor::Tensor;

/// `(1/n) Σ (y − ŷ)²` over every element.
pub fn mse(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    check_pair("mse", y, y_hat)?;
    Ok(y.data().iter().zip(y_hat.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.numel() as f64)
}

/// `(1/n) Σ |y − ŷ|` over every element.
pub fn mae(y: &Tensor, y_hat: &Tensor) -> Result<f64> {
    check_pair("mae", y, y_hat)?;
    Ok(y.data().iter().zip(y_hat.data()).map(|(a, b)| libm::fabs(a - b)).sum::<f64>() / y.numel() as f64)
}

fn check_pair(op: &'static str, y: &Tensor, y_hat: &Tensor) -> Result<()> {
    if y.shape() != y_hat.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    Ok(())
}

/// `100 · (base − treated) / base`; positive when `treated` is lower.
pub fn relative_improvement(base: f64, treated: f64) -> f64 {
    100.0 * (base - treated) / base
}

/// Anything that maps a batch to `B×pred_len×N` predictions.
pub trait Predictor {
    fn n_dims(&self) -> usize;
    fn pred_len(&self) -> usize;
    fn predict_batch(&self, batch: &Batch) -> Result<Tensor>;
}

impl Predictor for Forecaster {
    fn n_dims(&self) -> usize {
        self.config().n_dims
    }

    fn pred_len(&self) -> usize {
        self.config().pred_len
    }

    fn predict_batch(&self, batch: &Batch) -> Result<Tensor> {
        self.predict(batch)
    }
}

/// Repeats the last observed step across the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LastValue {
    pub n_dims: usize,
    pub pred_len: usize,
}

impl Predictor for LastValue {
    fn n_dims(&self) -> usize {
        self.n_dims
    }

    fn pred_len(&self) -> usize {
        self.pred_len
    }

    fn predict_batch(&self, batch: &Batch) -> Result<Tensor> {
        let &[b, l, n] = batch.x_enc.shape() else {
            return Err(Error::shape("LastValue", "x_enc must be B×L×N"));
        };
        let x = batch.x_enc.data();
        let mut out = Vec::with_capacity(b * self.pred_len * n);
        for i in 0..b {
            let last = &x[(i * l + l - 1) * n..(i * l + l) * n];
            for _ in 0..self.pred_len {
                out.extend_from_slice(last);
            }
        }
        Tensor::new([b, self.pred_len, n], out)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EvalOptions<'a> {
    /// Score only the first `horizon` predicted steps.
    pub horizon: Option<usize>,
    /// Score only the last column (the target variable).
    pub target_only: bool,
    /// Map predictions and targets back to the original scale first.
    pub denormalize: Option<&'a NormStats>,
    /// Zero means one batch of 32.
    pub batch_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Batched eval-mode forward over `samples`, metrics over every scored
/// element.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, samples: &[WindowSample], opts: &EvalOptions<'_>) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("test windows"));
    }
    let n = samples[0].y.shape()[1];
    if n != model.n_dims() {
        return Err(Error::ConfigMismatch(format!("model has {} dimensions, data has {}", model.n_dims(), n)));
    }
    let horizon = opts.horizon.unwrap_or(model.pred_len());
    if horizon == 0 || horizon > model.pred_len() {
        return Err(Error::ConfigMismatch(format!("horizon {} outside 1..={}", horizon, model.pred_len())));
    }
    if let Some(norm) = opts.denormalize {
        if norm.n_dims() != n {
            return Err(Error::ConfigMismatch(format!("normalization has {} dimensions, data has {}", norm.n_dims(), n)));
        }
    }
    let batch_size = if opts.batch_size == 0 { 32 } else { opts.batch_size };
    let (mut sq, mut abs, mut count) = (0.0, 0.0, 0usize);
    for chunk in samples.chunks(batch_size) {
        let batch = Batch::from_samples(chunk)?;
        let mut pred = model.predict_batch(&batch)?;
        let mut y = batch.y;
        if pred.shape() != y.shape() {
            return Err(Error::shape("evaluate", format!("prediction {:?} vs target {:?}", pred.shape(), y.shape())));
        }
        if let Some(norm) = opts.denormalize {
            pred = norm.denormalize(&pred);
            y = norm.denormalize(&y);
        }
        let pl = model.pred_len();
        for i in 0..chunk.len() {
            for t in 0..horizon {
                let base = (i * pl + t) * n;
                let cols = if opts.target_only { n - 1..n } else { 0..n };
                for c in cols {
                    let d = pred.data()[base + c] - y.data()[base + c];
                    sq += d * d;
                    abs += libm::fabs(d);
                    count += 1;
                }
            }
        }
    }
    Ok(Metrics { mse: sq / count as f64, mae: abs / count as f64 })
}

/// Repeated runs of one configuration at one horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub mse: Vec<f64>,
    pub mae: Vec<f64>,
    /// Seconds per run, when a clock was available.
    pub wall_clock: Vec<f64>,
}

impl EvalReport {
    pub fn new(dataset: impl Into<String>, horizon: usize) -> Self {
        EvalReport { dataset: dataset.into(), horizon, ..Self::default() }
    }

    pub fn push(&mut self, seed: u64, metrics: Metrics, seconds: Option<f64>) {
        self.seeds.push(seed);
        self.mse.push(metrics.mse);
        self.mae.push(metrics.mae);
        if let Some(s) = seconds {
            self.wall_clock.push(s);
        }
    }

    pub fn runs(&self) -> usize {
        self.mse.len()
    }

    pub fn mean_mse(&self) -> f64 {
        mean(&self.mse)
    }

    pub fn mean_mae(&self) -> f64 {
        mean(&self.mae)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Windowed train, validation and test sets of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSets {
    pub id: String,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
}

/// Result of one training run inside a comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub variant: &'static str,
    pub seed: u64,
    pub metrics: Metrics,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub treated: EvalReport,
    pub baseline: EvalReport,
    pub runs: Vec<RunRecord>,
}

impl AblationReport {
    pub fn mse_improvement(&self) -> f64 {
        relative_improvement(self.baseline.mean_mse(), self.treated.mean_mse())
    }

    pub fn mae_improvement(&self) -> f64 {
        relative_improvement(self.baseline.mean_mae(), self.treated.mean_mae())
    }
}

/// Hooks for the comparison loop: a monotonic clock in seconds and a
/// progress callback receiving each finished run.
#[derive(Default)]
pub struct Hooks<'a> {
    pub clock: Option<&'a dyn Fn() -> f64>,
    pub on_run: Option<&'a mut dyn FnMut(&RunRecord)>,
}

/// Trains `treated` and `baseline` once per seed and scores both on the
/// test windows. Both variants start from the same seed, so parameters they
/// share are initialized identically.
pub fn paired_compare(
    data: &WindowSets,
    treated: &ModelConfig,
    baseline: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    mut hooks: Hooks<'_>,
) -> Result<AblationReport> {
    if seeds.len() < 3 {
        return Err(Error::InvalidConfig { key: "seeds", reason: format!("need at least 3 seeds, got {}", seeds.len()) });
    }
    let horizon = treated.pred_len;
    if baseline.pred_len != horizon {
        return Err(Error::ConfigMismatch("variants must share pred_len".into()));
    }
    let mut report = AblationReport {
        treated: EvalReport::new(data.id.clone(), horizon),
        baseline: EvalReport::new(data.id.clone(), horizon),
        runs: Vec::new(),
    };
    for &seed in seeds {
        for (variant, config) in [("treated", treated), ("baseline", baseline)] {
            let start = hooks.clock.map(|c| c());
            let mut model = Forecaster::new(config.clone(), seed)?;
            let cfg = TrainConfig { seed, ..train_cfg.clone() };
            let TrainOutcome { history, best_epoch, .. } = train(&mut model, &data.train, &data.val, &cfg, None)?;
            let metrics = evaluate(&model, &data.test, &EvalOptions { batch_size: cfg.batch_size, ..Default::default() })?;
            let seconds = hooks.clock.zip(start).map(|(c, s)| c() - s);
            let target = if variant == "treated" { &mut report.treated } else { &mut report.baseline };
            target.push(seed, metrics, seconds);
            let record = RunRecord { variant, seed, metrics, history, best_epoch, seconds };
            if let Some(f) = hooks.on_run.as_mut() {
                f(&record);
            }
            report.runs.push(record);
        }
    }
    Ok(report)
}

/// Adaptive graph blocks on versus off, from identical initializations.
pub fn ablation_compare(
    data: &WindowSets,
    config: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
    hooks: Hooks<'_>,
) -> Result<AblationReport> {
    let treated = ModelConfig { use_gcn: true, ..config.clone() };
    let baseline = ModelConfig { use_gcn: false, ..config.clone() };
    paired_compare(data, &treated, &baseline, train_cfg, seeds, hooks)
}
