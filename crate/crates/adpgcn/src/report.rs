//! CSV reports.
//!
//! | file | columns |
//! |------|---------|
//! | `history.csv` | `epoch,lr,train_loss,val_loss` |
//! | `eval.csv` | `dataset,horizon,seed,mse,mae,seconds`, one row per run, then a `mean` row |
//! | `ablation.csv` | `variant,seed,mse,mae,best_epoch,seconds`, then a `mean` row per variant and an `improvement_pct` row |
//! | `adjacency.csv` | `dst` then one column per dimension name; row `i` holds row `i` of the matrix |
//! | `coupling_ranks.csv` | `src,dst,lag,weight,entry,rank,row_size` |

use std::fs::File;
use std::path::Path;

use adpgcn_core::data::Coupling;
use adpgcn_core::eval::{AblationReport, EvalReport};
use adpgcn_core::train::EpochRecord;
use adpgcn_core::Tensor;

use crate::error::{AppError, Result};

/// Row sums of an exported adjacency must match 1 this closely.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| AppError::Csv { path: path.to_owned(), source: e })
}

fn finish(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| AppError::io(path, e))
}

macro_rules! row {
    ($w:expr, $path:expr, [$($cell:expr),* $(,)?]) => {
        $w.write_record([$($cell.to_string()),*]).map_err(|e| AppError::Csv { path: $path.to_owned(), source: e })?
    };
}

fn opt(v: Option<f64>) -> String {
    v.map(|s| s.to_string()).unwrap_or_default()
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path)?;
    row!(w, path, ["epoch", "lr", "train_loss", "val_loss"]);
    for h in history {
        row!(w, path, [h.epoch, h.lr, h.train_loss, h.val_loss]);
    }
    finish(w, path)
}

pub fn write_eval(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = writer(path)?;
    row!(w, path, ["dataset", "horizon", "seed", "mse", "mae", "seconds"]);
    for r in reports {
        for i in 0..r.runs() {
            row!(w, path, [r.dataset, r.horizon, r.seeds[i], r.mse[i], r.mae[i], opt(r.wall_clock.get(i).copied())]);
        }
        row!(w, path, [r.dataset, r.horizon, "mean", r.mean_mse(), r.mean_mae(), opt(Some(r.wall_clock.iter().sum::<f64>()).filter(|_| !r.wall_clock.is_empty()))]);
    }
    finish(w, path)
}

pub fn write_ablation(path: &Path, report: &AblationReport) -> Result<()> {
    let mut w = writer(path)?;
    row!(w, path, ["variant", "seed", "mse", "mae", "best_epoch", "seconds"]);
    for r in &report.runs {
        row!(w, path, [r.variant, r.seed, r.metrics.mse, r.metrics.mae, r.best_epoch, opt(r.seconds)]);
    }
    for (name, rep) in [("treated", &report.treated), ("baseline", &report.baseline)] {
        row!(w, path, [name, "mean", rep.mean_mse(), rep.mean_mae(), "", ""]);
    }
    row!(w, path, ["improvement_pct", "", report.mse_improvement(), report.mae_improvement(), "", ""]);
    finish(w, path)
}

/// Rejects matrices whose rows stray from 1 by more than [`ROW_SUM_TOLERANCE`].
pub fn check_row_stochastic(adj: &Tensor) -> Result<()> {
    let n = adj.shape()[0];
    for i in 0..n {
        let sum: f64 = adj.row(i).iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) || adj.row(i).iter().any(|&v| v < 0.0) {
            return Err(AppError::AdjacencyNotStochastic { row: i, sum });
        }
    }
    Ok(())
}

pub fn write_adjacency(path: &Path, adj: &Tensor, columns: &[String]) -> Result<()> {
    let n = columns.len();
    if adj.shape() != [n, n] {
        return Err(AppError::config("columns", format!("{n} names for a {:?} matrix", adj.shape())));
    }
    check_row_stochastic(adj)?;
    let mut w = writer(path)?;
    w.write_record(std::iter::once("dst").chain(columns.iter().map(String::as_str)))
        .map_err(|e| AppError::Csv { path: path.to_owned(), source: e })?;
    for (i, name) in columns.iter().enumerate() {
        w.write_record(std::iter::once(name.clone()).chain(adj.row(i).iter().map(f64::to_string)))
            .map_err(|e| AppError::Csv { path: path.to_owned(), source: e })?;
    }
    finish(w, path)
}

/// Position of entry `(dst, src)` in row `dst` sorted by descending weight,
/// counting from 1 and ignoring the diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingRank {
    pub coupling: Coupling,
    pub entry: f64,
    pub rank: usize,
    /// Candidates in the row: `N − 1`.
    pub row_size: usize,
}

pub fn coupling_ranks(adj: &Tensor, couplings: &[Coupling]) -> Result<Vec<CouplingRank>> {
    let n = adj.shape()[0];
    couplings
        .iter()
        .map(|&c| {
            if c.src >= n || c.dst >= n {
                return Err(AppError::config("couplings", format!("{}→{} outside a {n}-node matrix", c.src, c.dst)));
            }
            let row = adj.row(c.dst);
            let entry = row[c.src];
            let rank = 1 + (0..n).filter(|&j| j != c.dst && j != c.src && row[j] > entry).count();
            Ok(CouplingRank { coupling: c, entry, rank, row_size: n - 1 })
        })
        .collect()
}

pub fn write_coupling_ranks(path: &Path, ranks: &[CouplingRank]) -> Result<()> {
    let mut w = writer(path)?;
    row!(w, path, ["src", "dst", "lag", "weight", "entry", "rank", "row_size"]);
    for r in ranks {
        let c = r.coupling;
        row!(w, path, [c.src, c.dst, c.lag, c.weight, r.entry, r.rank, r.row_size]);
    }
    finish(w, path)
}
