//! Raw series to normalized, split, windowed datasets.

use adpgcn_core::data::{chronological_split, fit_normalize, make_windows, NormStats, RawSeries, WindowSpec};
use adpgcn_core::eval::WindowSets;

use crate::error::Result;

pub struct Prepared {
    pub sets: WindowSets,
    pub norm: NormStats,
    pub columns: Vec<String>,
}

/// Normalizes with statistics from the training segment, splits
/// chronologically, and cuts windows from each segment at `stride`.
pub fn prepare(series: &RawSeries, id: &str, window: WindowSpec, fractions: [f64; 3], stride: usize) -> Result<Prepared> {
    let (normalized, norm) = fit_normalize(series, fractions[0])?;
    let (train, val, test) = chronological_split(&normalized, fractions)?;
    let sets = WindowSets {
        id: id.to_owned(),
        train: make_windows(&train, window, stride)?,
        val: make_windows(&val, window, stride)?,
        test: make_windows(&test, window, stride)?,
    };
    Ok(Prepared { sets, norm, columns: series.columns().to_vec() })
}

/// Test-segment windows of an already fitted normalization.
pub fn test_windows(series: &RawSeries, norm: &NormStats, window: WindowSpec, fractions: [f64; 3], stride: usize) -> Result<WindowSets> {
    let normalized = series.with_values(norm.normalize(series.values()))?;
    let (_, _, test) = chronological_split(&normalized, fractions)?;
    Ok(WindowSets { id: String::new(), train: Vec::new(), val: Vec::new(), test: make_windows(&test, window, stride)? })
}
