//! Series CSV files: a timestamp column followed by numeric columns.

use std::path::Path;

use adpgcn_core::data::{Coupling, RawSeries};
use adpgcn_core::{Error as CoreError, Tensor};
use chrono::NaiveDateTime;

use crate::error::{AppError, Result};

const TIME_FORMATS: [&str; 4] = ["%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%dT%H:%M"];
const WRITE_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

fn parse_time(s: &str) -> Option<NaiveDateTime> {
    TIME_FORMATS.iter().find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> AppError + '_ {
    move |source| AppError::Csv { path: path.to_path_buf(), source }
}

/// Reads a series. The first column holds timestamps; every other column is
/// a modeled dimension. With `target`, that column is moved to the end so
/// target-only metrics can address it as the last dimension.
///
/// Rows are numbered from 1 (the first data row) in errors; columns are
/// numbered among the value columns from 0.
pub fn read_series(path: &Path, target: Option<&str>) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.len() < 2 {
        return Err(AppError::BadFile { path: path.into(), reason: "need a timestamp column and at least one value column".into() });
    }
    let mut columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    let n = columns.len();
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let row = i + 1;
        let ts = record.get(0).unwrap_or("");
        timestamps.push(parse_time(ts).ok_or_else(|| AppError::Parse {
            path: path.into(),
            row,
            column: headers[0].to_owned(),
            value: ts.to_owned(),
        })?);
        for c in 0..n {
            let cell = record.get(c + 1).unwrap_or("");
            if cell.is_empty() || cell.eq_ignore_ascii_case("nan") || cell.eq_ignore_ascii_case("na") {
                return Err(CoreError::MissingValue { row, col: c }.into());
            }
            let v: f64 = cell.parse().map_err(|_| AppError::Parse {
                path: path.into(),
                row,
                column: columns[c].clone(),
                value: cell.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(CoreError::MissingValue { row, col: c }.into());
            }
            values.push(v);
        }
    }
    if timestamps.is_empty() {
        return Err(AppError::BadFile { path: path.into(), reason: "no data rows".into() });
    }
    if let Some(target) = target {
        let t = columns
            .iter()
            .position(|c| c == target)
            .ok_or_else(|| AppError::config("target", format!("column `{target}` not found in {}", path.display())))?;
        if t + 1 != n {
            let rows = timestamps.len();
            let mut reordered = Vec::with_capacity(values.len());
            let order: Vec<usize> = (0..n).filter(|&c| c != t).chain([t]).collect();
            for r in 0..rows {
                reordered.extend(order.iter().map(|&c| values[r * n + c]));
            }
            values = reordered;
            let name = columns.remove(t);
            columns.push(name);
        }
    }
    let rows = timestamps.len();
    let tensor = Tensor::new([rows, n], values)?;
    RawSeries::new(timestamps, tensor, columns).map_err(|e| match e {
        // Core numbers rows from 0.
        CoreError::NonMonotonicTimestamp { row } => CoreError::NonMonotonicTimestamp { row: row + 1 }.into(),
        other => other.into(),
    })
}

/// Writes `date,<columns...>` with shortest round-trip float formatting.
pub fn write_series(path: &Path, series: &RawSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["date".to_owned()];
    header.extend(series.columns().iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    let n = series.n_dims();
    for (t, ts) in series.timestamps().iter().enumerate() {
        let mut rec = vec![ts.format(WRITE_FORMAT).to_string()];
        rec.extend(series.values().data()[t * n..(t + 1) * n].iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

/// Ground-truth coupling sidecar: `src,dst,lag,weight` with dimension
/// indices.
pub fn write_couplings(path: &Path, couplings: &[Coupling]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["src", "dst", "lag", "weight"]).map_err(csv_err(path))?;
    for c in couplings {
        w.write_record([c.src.to_string(), c.dst.to_string(), c.lag.to_string(), c.weight.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_couplings(path: &Path) -> Result<Vec<Coupling>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let field = |c: usize, name: &str| -> Result<&str> {
            record.get(c).ok_or_else(|| AppError::Parse { path: path.into(), row: i + 1, column: name.into(), value: String::new() })
        };
        let bad = |name: &str, v: &str| AppError::Parse { path: path.into(), row: i + 1, column: name.into(), value: v.into() };
        let (s, d, l, w) = (field(0, "src")?, field(1, "dst")?, field(2, "lag")?, field(3, "weight")?);
        out.push(Coupling {
            src: s.parse().map_err(|_| bad("src", s))?,
            dst: d.parse().map_err(|_| bad("dst", d))?,
            lag: l.parse().map_err(|_| bad("lag", l))?,
            weight: w.parse().map_err(|_| bad("weight", w))?,
        });
    }
    Ok(out)
}

/// `<stem>.couplings.csv` next to a series file.
pub fn couplings_sidecar(series_path: &Path) -> std::path::PathBuf {
    let stem = series_path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    series_path.with_file_name(format!("{stem}.couplings.csv"))
}
