use alloc::vec::Vec;

use super::series::RawSeries;
use super::split::split_point;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-column mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics over the first `rows` rows of a `T×N` matrix.
    pub fn fit(values: &Tensor, rows: usize) -> Result<Self> {
        let n = values.shape()[1];
        let rows = rows.min(values.shape()[0]);
        if rows == 0 {
            return Err(Error::EmptyDataset("normalization rows"));
        }
        let data = &values.data()[..rows * n];
        let mut mean = alloc::vec![0.0; n];
        for row in data.chunks(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = alloc::vec![0.0; n];
        for row in data.chunks(n) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| libm::sqrt(s / rows as f64)).collect();
        if let Some(col) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::ConstantColumn { col });
        }
        Ok(NormStats { mean, std })
    }

    pub fn n_dims(&self) -> usize {
        self.mean.len()
    }

    /// `(x − mean) / std` along the last axis.
    pub fn normalize(&self, values: &Tensor) -> Tensor {
        self.map_last_axis(values, |v, m, s| (v - m) / s)
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, values: &Tensor) -> Tensor {
        self.map_last_axis(values, |v, m, s| v * s + m)
    }

    fn map_last_axis(&self, values: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let n = self.n_dims();
        assert_eq!(values.shape().last(), Some(&n), "normalization width");
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % n], self.std[i % n]))
            .collect();
        Tensor::from_parts(values.shape().to_vec(), data)
    }
}

/// Zero-mean, unit-variance normalization using statistics of the leading
/// `train_fraction` of rows only.
pub fn fit_normalize(series: &RawSeries, train_fraction: f64) -> Result<(RawSeries, NormStats)> {
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::InvalidSplit(alloc::format!("train fraction {train_fraction} outside (0, 1]")));
    }
    let rows = split_point(series.len(), train_fraction).max(1);
    let stats = NormStats::fit(series.values(), rows)?;
    let normalized = series.with_values(stats.normalize(series.values()))?;
    Ok((normalized, stats))
}
