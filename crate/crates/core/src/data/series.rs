use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::{Datelike, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of calendar features per time step: month, day, weekday, hour.
pub const TIME_FEATURES: usize = 4;

/// Calendar features scaled to `[-0.5, 0.5]`.
pub fn time_features(ts: &NaiveDateTime) -> [f64; TIME_FEATURES] {
    [
        (ts.month0() as f64) / 11.0 - 0.5,
        (ts.day0() as f64) / 30.0 - 0.5,
        (ts.weekday().num_days_from_monday() as f64) / 6.0 - 0.5,
        (ts.hour() as f64) / 23.0 - 0.5,
    ]
}

/// An evenly sampled multivariate series, one column per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    timestamps: Vec<NaiveDateTime>,
    values: Tensor,
    columns: Vec<String>,
}

impl RawSeries {
    /// `values` is `T×N`; timestamps must be strictly increasing with a
    /// constant step.
    pub fn new(timestamps: Vec<NaiveDateTime>, values: Tensor, columns: Vec<String>) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 2 || shape[0] != timestamps.len() || shape[1] != columns.len() {
            return Err(Error::shape(
                "RawSeries::new",
                format!("values {:?} vs {} timestamps, {} columns", shape, timestamps.len(), columns.len()),
            ));
        }
        if timestamps.len() >= 2 {
            let step = timestamps[1] - timestamps[0];
            for (row, pair) in timestamps.windows(2).enumerate() {
                let delta = pair[1] - pair[0];
                if delta <= chrono::TimeDelta::zero() || delta != step {
                    return Err(Error::NonMonotonicTimestamp { row: row + 1 });
                }
            }
        }
        Ok(RawSeries { timestamps, values, columns })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_dims(&self) -> usize {
        self.columns.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    /// `T×N` values.
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        let n = self.n_dims();
        self.values.data().iter().skip(c).step_by(n).copied().collect()
    }

    /// Rows `[start, end)` as a new series.
    pub fn rows(&self, start: usize, end: usize) -> Result<RawSeries> {
        if start >= end || end > self.len() {
            return Err(Error::SeriesTooShort { needed: end.max(start + 1), got: self.len() });
        }
        let n = self.n_dims();
        let values = Tensor::new([end - start, n], self.values.data()[start * n..end * n].to_vec())?;
        Ok(RawSeries { timestamps: self.timestamps[start..end].to_vec(), values, columns: self.columns.clone() })
    }

    /// Same timestamps and columns over new values of identical shape.
    pub fn with_values(&self, values: Tensor) -> Result<RawSeries> {
        if values.shape() != self.values.shape() {
            return Err(Error::ShapeMismatch { op: "with_values", detail: format!("{:?} vs {:?}", self.values.shape(), values.shape()) });
        }
        Ok(RawSeries { timestamps: self.timestamps.clone(), values, columns: self.columns.clone() })
    }
}
