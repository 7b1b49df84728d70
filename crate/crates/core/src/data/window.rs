use alloc::format;
use alloc::vec::Vec;

use super::series::{time_features, RawSeries, TIME_FEATURES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Window lengths, in time steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub seq_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
}

impl WindowSpec {
    pub fn span(&self) -> usize {
        self.seq_len + self.pred_len
    }
}

/// One training example: `seq_len` observed steps, the `label_len` known
/// steps that prefix the decoder input, and the following `pred_len` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// Row of the source series where `x_enc` starts.
    pub start: usize,
    /// `seq_len × N`
    pub x_enc: Tensor,
    /// `label_len × N`: the last `label_len` rows of `x_enc`.
    pub x_dec_known: Tensor,
    /// `pred_len × N`: the rows immediately after `x_enc`.
    pub y: Tensor,
    /// `seq_len × 4` calendar features.
    pub marks_enc: Tensor,
    /// `(label_len + pred_len) × 4` calendar features.
    pub marks_dec: Tensor,
}

/// Sliding windows at `stride`; with stride 1 there are
/// `T − seq_len − pred_len + 1` of them.
pub fn make_windows(series: &RawSeries, spec: WindowSpec, stride: usize) -> Result<Vec<WindowSample>> {
    if stride == 0 {
        return Err(Error::InvalidConfig { key: "stride", reason: "must be at least 1".into() });
    }
    if spec.seq_len == 0 || spec.pred_len == 0 || spec.label_len == 0 || spec.label_len > spec.seq_len {
        return Err(Error::InvalidConfig {
            key: "window",
            reason: format!("need 1 ≤ label_len ≤ seq_len and pred_len ≥ 1, got {:?}", spec),
        });
    }
    let total = series.len();
    if total < spec.span() {
        return Err(Error::SeriesTooShort { needed: spec.span(), got: total });
    }
    let n = series.n_dims();
    let values = series.values().data();
    let marks: Vec<[f64; TIME_FEATURES]> = series.timestamps().iter().map(time_features).collect();
    let rows = |start: usize, len: usize| Tensor::from_parts(alloc::vec![len, n], values[start * n..(start + len) * n].to_vec());
    let mark_rows = |start: usize, len: usize| {
        Tensor::from_parts(alloc::vec![len, TIME_FEATURES], marks[start..start + len].iter().flatten().copied().collect())
    };
    let dec_start = spec.seq_len - spec.label_len;
    Ok((0..=total - spec.span())
        .step_by(stride)
        .map(|s| WindowSample {
            start: s,
            x_enc: rows(s, spec.seq_len),
            x_dec_known: rows(s + dec_start, spec.label_len),
            y: rows(s + spec.seq_len, spec.pred_len),
            marks_enc: mark_rows(s, spec.seq_len),
            marks_dec: mark_rows(s + dec_start, spec.label_len + spec.pred_len),
        })
        .collect())
}

/// Samples stacked along a leading batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x_enc: Tensor,
    pub x_dec_known: Tensor,
    pub y: Tensor,
    pub marks_enc: Tensor,
    pub marks_dec: Tensor,
}

impl Batch {
    pub fn from_samples<S: core::borrow::Borrow<WindowSample>>(samples: &[S]) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset("batch"))?.borrow();
        let stack = |pick: fn(&WindowSample) -> &Tensor| -> Result<Tensor> {
            let shape = pick(first).shape().to_vec();
            let mut data = Vec::with_capacity(samples.len() * pick(first).numel());
            for s in samples {
                let t = pick(s.borrow());
                if t.shape() != shape.as_slice() {
                    return Err(Error::shape("Batch::from_samples", format!("{:?} vs {:?}", t.shape(), shape)));
                }
                data.extend_from_slice(t.data());
            }
            let mut full = alloc::vec![samples.len()];
            full.extend(shape);
            Ok(Tensor::from_parts(full, data))
        };
        Ok(Batch {
            x_enc: stack(|s| &s.x_enc)?,
            x_dec_known: stack(|s| &s.x_dec_known)?,
            y: stack(|s| &s.y)?,
            marks_enc: stack(|s| &s.marks_enc)?,
            marks_dec: stack(|s| &s.marks_dec)?,
        })
    }

    pub fn len(&self) -> usize {
        self.x_enc.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
