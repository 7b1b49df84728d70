use alloc::format;

use super::series::RawSeries;
use crate::error::{Error, Result};

/// Train / validation / test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.7, 0.1, 0.2];

/// Number of leading rows covered by `fraction` of `len`.
pub fn split_point(len: usize, fraction: f64) -> usize {
    libm::round(len as f64 * fraction) as usize
}

/// Contiguous, order-preserving train/val/test segments. Windows are cut
/// from each segment separately, so none straddles a boundary.
pub fn chronological_split(series: &RawSeries, fractions: [f64; 3]) -> Result<(RawSeries, RawSeries, RawSeries)> {
    if fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::InvalidSplit(format!("every fraction must be positive, got {:?}", fractions)));
    }
    let total: f64 = fractions.iter().sum();
    if libm::fabs(total - 1.0) > 1e-9 {
        return Err(Error::InvalidSplit(format!("fractions sum to {total}, expected 1")));
    }
    let len = series.len();
    let train_end = split_point(len, fractions[0]);
    let val_end = split_point(len, fractions[0] + fractions[1]);
    if train_end == 0 || val_end <= train_end || val_end >= len {
        return Err(Error::SeriesTooShort { needed: 3, got: len });
    }
    Ok((series.rows(0, train_end)?, series.rows(train_end, val_end)?, series.rows(val_end, len)?))
}
