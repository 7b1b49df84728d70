//! Central finite-difference oracle for reverse-mode gradients.

use alloc::vec::Vec;

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Which parameter coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// `count` coordinates drawn uniformly over all parameters.
    Sample { count: usize, seed: u64 },
    /// `count` coordinates drawn from each parameter tensor separately.
    PerTensor { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordCheck>,
}

impl FdReport {
    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|ad − fd| / max(1, |ad|, |fd|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric) / 1f64.max(libm::fabs(analytic)).max(libm::fabs(numeric))
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `f` receives a fresh graph and one trainable leaf per entry of `params`
/// and must return a scalar. It is called once for the analytic gradient and
/// twice per probed coordinate, so it must be deterministic.
pub fn finite_difference_check<F>(f: F, params: &[Tensor], h: f64, coords: Coords) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.param(p.clone())).collect();
    let loss = f(&mut graph, &vars)?;
    graph.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| graph.grad(v).map_or_else(|| alloc::vec![0.0; graph.value(v).numel()], <[f64]>::to_vec))
        .collect();
    drop(graph);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out).data()[0];
        if !v.is_finite() {
            return Err(Error::NonFiniteValue { op: "finite_difference_check" });
        }
        Ok(v)
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut checks = Vec::new();
    for (t, i) in select_coords(params, coords) {
        let original = work[t].data()[i];
        work[t].data_mut()[i] = original + h;
        let plus = eval(&work)?;
        work[t].data_mut()[i] = original - h;
        let minus = eval(&work)?;
        work[t].data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let ad = analytic[t][i];
        checks.push(CoordCheck { tensor: t, index: i, analytic: ad, numeric, rel_error: relative_error(ad, numeric) });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(FdReport { max_rel_error, checks })
}

fn select_coords(params: &[Tensor], coords: Coords) -> Vec<(usize, usize)> {
    match coords {
        Coords::All => params.iter().enumerate().flat_map(|(t, p)| (0..p.numel()).map(move |i| (t, i))).collect(),
        Coords::Sample { count, seed } => {
            let total: usize = params.iter().map(Tensor::numel).sum();
            let mut rng = stream_rng(seed, Stream::Shuffle);
            (0..count)
                .map(|_| {
                    let mut flat = rng.random_range(0..total);
                    let mut t = 0;
                    while flat >= params[t].numel() {
                        flat -= params[t].numel();
                        t += 1;
                    }
                    (t, flat)
                })
                .collect()
        }
        Coords::PerTensor { count, seed } => {
            let mut rng = stream_rng(seed, Stream::Shuffle);
            params
                .iter()
                .enumerate()
                .flat_map(|(t, p)| {
                    let n = p.numel();
                    (0..count.min(n)).map(|_| (t, rng.random_range(0..n))).collect::<Vec<_>>()
                })
                .collect()
        }
    }
}
