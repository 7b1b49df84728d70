//! Graph convolutions over the variables of a multivariate series.
//!
//! Each variable is a node. The dependency structure is either supplied
//! (a transition matrix `P`) or learned as
//! `Ã = softmax_rows(relu(E1 · E2ᵀ))` from two node-embedding tables.
//! Convolutions sum matrix powers: `Z = Σ_{k=0..K} Pᵏ X W_k`.
//!
//! The free functions work on raw [`Var`]s; [`AdaptiveAdjacency`] and
//! [`GcnBlock`] are the parameterized modules used by the forecaster.

use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

/// `softmax_rows(relu(source · targetᵀ))` for `N×c` embedding tables.
pub fn materialize_adjacency(g: &mut Graph, source: Var, target: Var) -> Result<Var> {
    let (s, t) = (g.shape(source), g.shape(target));
    if s.len() != 2 || s != t {
        return Err(Error::shape("materialize_adjacency", format!("E1 {:?} vs E2 {:?}", s, t)));
    }
    let t_tr = g.transpose(target)?;
    let scores = g.matmul(source, t_tr)?;
    let scores = g.relu(scores)?;
    g.softmax_rows(scores)
}

/// Single first-order layer `Ã X W`; the caller supplies the self-loop
/// augmented adjacency.
pub fn gcn_layer(g: &mut Graph, a_tilde: Var, x: Var, w: Var) -> Result<Var> {
    let n = square_extent(g, a_tilde, "gcn_layer")?;
    if g.shape(x).len() != 2 || g.shape(x)[0] != n {
        return Err(Error::shape("gcn_layer", format!("Ã is {n}×{n}, X is {:?}", g.shape(x))));
    }
    let ax = g.matmul(a_tilde, x)?;
    g.matmul(ax, w)
}

/// `Σ_{k=0..K} Pᵏ X W_k` for a single graph signal `X: N×D`, with
/// `K = weights.len() - 1`.
pub fn diffusion_conv(g: &mut Graph, p: Var, x: Var, weights: &[Var]) -> Result<Var> {
    let xs = g.shape(x).to_vec();
    if xs.len() != 2 {
        return Err(Error::shape("diffusion_conv", format!("X must be N×D, got {:?}", xs)));
    }
    let x3 = g.reshape(x, &[1, xs[0], xs[1]])?;
    let z = batched_diffusion_conv(g, p, x3, weights)?;
    let out_ch = g.shape(z)[2];
    g.reshape(z, &[xs[0], out_ch])
}

/// [`diffusion_conv`] over the materialized adaptive adjacency.
pub fn adaptive_graph_conv(g: &mut Graph, source: Var, target: Var, x: Var, weights: &[Var]) -> Result<Var> {
    let a = materialize_adjacency(g, source, target)?;
    diffusion_conv(g, a, x, weights)
}

/// `Σ_k Pᵏ X_g W_k` for every graph signal `X_g` of `x: G×N×C_in`.
///
/// Powers are applied to the signal by repeated multiplication
/// (`Pᵏ X = P (Pᵏ⁻¹ X)`); no matrix power is ever formed.
pub fn batched_diffusion_conv(g: &mut Graph, p: Var, x: Var, weights: &[Var]) -> Result<Var> {
    let n = square_extent(g, p, "diffusion_conv")?;
    let xs = g.shape(x).to_vec();
    if xs.len() != 3 {
        return Err(Error::shape("diffusion_conv", format!("signal must be G×N×C, got {:?}", xs)));
    }
    if xs[1] != n {
        return Err(Error::NodeCountMismatch { expected: n, got: xs[1] });
    }
    let Some(&w0) = weights.first() else {
        return Err(Error::shape("diffusion_conv", "need at least one weight matrix"));
    };
    let w_shape = g.shape(w0).to_vec();
    if w_shape.len() != 2 || w_shape[0] != xs[2] || weights.iter().any(|&w| g.shape(w) != w_shape.as_slice()) {
        return Err(Error::shape(
            "diffusion_conv",
            format!("weights must all be {}×C_out, first is {:?}", xs[2], w_shape),
        ));
    }
    g.diffusion(p, x, weights)
}

/// Stacked adaptive convolutions applied independently at every time step
/// of `x_seq: B×L×N`, with ReLU between layers and a residual connection.
///
/// `layers[i]` holds the `K+1` weight matrices of layer `i`; the channel plan
/// must start and end at one channel per node.
pub fn gcn_block(g: &mut Graph, adjacency: Var, x_seq: Var, layers: &[Vec<Var>]) -> Result<Var> {
    let n = square_extent(g, adjacency, "gcn_block")?;
    let xs = g.shape(x_seq).to_vec();
    if xs.len() != 3 {
        return Err(Error::shape("gcn_block", format!("expected B×L×N, got {:?}", xs)));
    }
    if xs[2] != n {
        return Err(Error::NodeCountMismatch { expected: n, got: xs[2] });
    }
    let mut h = g.reshape(x_seq, &[xs[0] * xs[1], n, 1])?;
    for (i, weights) in layers.iter().enumerate() {
        h = batched_diffusion_conv(g, adjacency, h, weights)?;
        if i + 1 < layers.len() {
            h = g.relu(h)?;
        }
    }
    if g.shape(h)[2] != 1 {
        return Err(Error::shape("gcn_block", "block must end with one channel per node"));
    }
    let h = g.reshape(h, &xs)?;
    g.add(h, x_seq)
}

/// Row-normalized self-loop adjacency `D⁻¹(A + I)`, the default transition
/// matrix for [`diffusion_conv`] when a binary adjacency is known.
pub fn transition_matrix(adjacency: &Tensor) -> Result<Tensor> {
    let s = adjacency.shape();
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape("transition_matrix", format!("expected square matrix, got {:?}", s)));
    }
    let n = s[0];
    let mut data = adjacency.data().to_vec();
    for i in 0..n {
        data[i * n + i] += 1.0;
        let row = &mut data[i * n..(i + 1) * n];
        let total: f64 = row.iter().sum();
        if total <= 0.0 {
            return Err(Error::shape("transition_matrix", format!("row {i} has no positive mass")));
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Tensor::new([n, n], data)
}

fn square_extent(g: &Graph, m: Var, op: &'static str) -> Result<usize> {
    let s = g.shape(m);
    if s.len() != 2 || s[0] != s[1] {
        return Err(Error::shape(op, format!("expected square matrix, got {:?}", s)));
    }
    Ok(s[0])
}

/// Hyperparameters of a [`GcnBlock`] and its adjacency.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcnConfig {
    /// Hidden channels per node between stacked layers.
    pub hidden: usize,
    /// Highest adjacency power `K`.
    pub depth: usize,
    /// Width `c` of the node embeddings.
    pub embed_dim: usize,
    /// Number of stacked convolution layers.
    pub layers: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig { hidden: 16, depth: 2, embed_dim: 10, layers: 2 }
    }
}

impl GcnConfig {
    /// Channel counts at each layer boundary: `1 → h → … → h → 1`.
    pub fn channel_plan(&self) -> Vec<usize> {
        let mut plan = alloc::vec![1];
        plan.extend(core::iter::repeat_n(self.hidden, self.layers.saturating_sub(1)));
        plan.push(1);
        plan
    }
}

/// Learnable node embeddings `E1` (source) and `E2` (target).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdaptiveAdjacency {
    pub source: ParamId,
    pub target: ParamId,
    pub nodes: usize,
    pub embed_dim: usize,
}

impl AdaptiveAdjacency {
    /// Entries uniform on `[-0.5, 0.5] / √c`.
    pub fn init(store: &mut ParamStore, prefix: &str, nodes: usize, embed_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 0.5 / libm::sqrt(embed_dim as f64);
        let source = store.add(format!("{prefix}.source"), uniform(&[nodes, embed_dim], bound, rng));
        let target = store.add(format!("{prefix}.target"), uniform(&[nodes, embed_dim], bound, rng));
        AdaptiveAdjacency { source, target, nodes, embed_dim }
    }

    pub fn materialize(&self, s: &mut Session) -> Result<Var> {
        let (e1, e2) = (s.param(self.source), s.param(self.target));
        materialize_adjacency(s.graph(), e1, e2)
    }

    /// The row-stochastic matrix for the stored embeddings, off-graph.
    pub fn matrix(&self, store: &ParamStore) -> Result<Tensor> {
        let mut g = Graph::new();
        let e1 = g.constant(store.get(self.source).clone());
        let e2 = g.constant(store.get(self.target).clone());
        let a = materialize_adjacency(&mut g, e1, e2)?;
        Ok(g.value(a).clone())
    }
}

/// Weights `W_0..W_K` of one convolution layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphConvParams {
    pub weights: Vec<ParamId>,
}

impl GraphConvParams {
    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }
}

/// Stacked adaptive graph convolutions with a residual connection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GcnBlock {
    pub layers: Vec<GraphConvParams>,
    pub nodes: usize,
}

impl GcnBlock {
    pub fn init(store: &mut ParamStore, prefix: &str, nodes: usize, cfg: &GcnConfig, rng: &mut ChaCha8Rng) -> Self {
        let plan = cfg.channel_plan();
        let layers = plan
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let bound = 1.0 / libm::sqrt((io[0] * (cfg.depth + 1)) as f64);
                let weights = (0..=cfg.depth)
                    .map(|k| store.add(format!("{prefix}.layer{i}.w{k}"), uniform(&[io[0], io[1]], bound, rng)))
                    .collect();
                GraphConvParams { weights }
            })
            .collect();
        GcnBlock { layers, nodes }
    }

    pub fn forward(&self, s: &mut Session, adjacency: Var, x_seq: Var) -> Result<Var> {
        let layers: Vec<Vec<Var>> =
            self.layers.iter().map(|l| l.weights.iter().map(|&w| s.param(w)).collect()).collect();
        gcn_block(s.graph(), adjacency, x_seq, &layers)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_check, Coords};
    use alloc::vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn zero_embeddings_give_uniform_rows() {
        let mut g = Graph::new();
        let e = g.constant(Tensor::zeros([3, 2]));
        let a = materialize_adjacency(&mut g, e, e).unwrap();
        assert!(g.value(a).data().iter().all(|&v| v == 1.0 / 3.0));
    }

    #[test]
    fn two_node_closed_form() {
        let mut g = Graph::new();
        let e = g.constant(t(&[2, 1], &[1., 0.]));
        let a = materialize_adjacency(&mut g, e, e).unwrap();
        let ex = core::f64::consts::E;
        let expect = [ex / (ex + 1.0), 1.0 / (ex + 1.0), 0.5, 0.5];
        for (v, e) in g.value(a).data().iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn mismatched_embeddings_rejected() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([3, 2]));
        let b = g.constant(Tensor::zeros([3, 3]));
        assert!(matches!(materialize_adjacency(&mut g, a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gcn_layer_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let i = g.constant(Tensor::eye(2));
        let z = gcn_layer(&mut g, i, x, i).unwrap();
        assert_eq!(g.value(z), g.value(x));

        let avg = g.constant(Tensor::full([2, 2], 0.5));
        let x = g.constant(t(&[2, 1], &[2., 4.]));
        let w = g.constant(t(&[1, 1], &[1.]));
        let z = gcn_layer(&mut g, avg, x, w).unwrap();
        assert_eq!(g.value(z).data(), &[3., 3.]);

        let self_loop = g.constant(t(&[2, 2], &[1., 1., 0., 1.]));
        let x = g.constant(t(&[2, 1], &[1., 2.]));
        let z = gcn_layer(&mut g, self_loop, x, w).unwrap();
        assert_eq!(g.value(z).data(), &[3., 2.]);
    }

    #[test]
    fn diffusion_identity_powers_and_zero_depth() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let ws: Vec<Var> = (0..3).map(|k| g.constant(Tensor::full([2, 1], k as f64 + 1.0))).collect();
        let p = g.constant(Tensor::eye(2));
        let z = diffusion_conv(&mut g, p, x, &ws).unwrap();
        // X (W0 + W1 + W2) with W sum = [6, 6]ᵀ
        assert_eq!(g.value(z).data(), &[18., 42.]);

        let p = g.constant(t(&[2, 2], &[0.1, 0.9, 0.3, 0.7]));
        let z = diffusion_conv(&mut g, p, x, &ws[..1]).unwrap();
        assert_eq!(g.value(z).data(), &[3., 7.]);
    }

    #[test]
    fn uniform_adjacency_conv_example() {
        let mut g = Graph::new();
        let e = g.param(Tensor::zeros([2, 3]));
        let x = g.constant(t(&[2, 1], &[1., 3.]));
        let w0 = g.constant(t(&[1, 1], &[1.]));
        let w1 = g.constant(t(&[1, 1], &[1.]));
        let z = adaptive_graph_conv(&mut g, e, e, x, &[w0, w1]).unwrap();
        assert_eq!(g.value(z).data(), &[3., 5.]);
    }

    #[test]
    fn zero_depth_ignores_embeddings() {
        let mut g = Graph::new();
        let e1 = g.param(t(&[2, 1], &[0.3, -0.2]));
        let e2 = g.param(t(&[2, 1], &[0.5, 0.1]));
        let x = g.constant(t(&[2, 1], &[1., 3.]));
        let w0 = g.param(t(&[1, 2], &[2., -1.]));
        let z = adaptive_graph_conv(&mut g, e1, e2, x, &[w0]).unwrap();
        let s = g.sum(z).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(e1).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
        assert!(g.grad(e2).map_or(true, |d| d.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adaptive_conv_gradient_matches_fd() {
        let params = [
            t(&[3, 2], &[0.4, -0.3, 0.8, 0.1, -0.5, 0.6]),
            t(&[3, 2], &[0.7, 0.2, -0.1, 0.9, 0.3, -0.4]),
            t(&[1, 2], &[0.5, -0.7]),
            t(&[1, 2], &[0.2, 0.3]),
            t(&[1, 2], &[-0.6, 0.4]),
        ];
        let x = t(&[3, 1], &[1.0, -2.0, 0.5]);
        let report = finite_difference_check(
            |g, p| {
                let xv = g.constant(x.clone());
                let z = adaptive_graph_conv(g, p[0], p[1], xv, &p[2..])?;
                let sq = g.mul(z, z)?;
                g.sum(sq)
            },
            &params,
            1e-5,
            Coords::All,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{:?}", report.worst());
    }

    #[test]
    fn block_zero_weights_is_identity_and_unit_weight_doubles() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full([3, 3], 1.0 / 3.0));
        let x = g.constant(Tensor::new([1, 2, 3], vec![1., -2., 3., 0.5, 0.25, -4.]).unwrap());
        let zeros: Vec<Vec<Var>> = vec![
            (0..3).map(|_| g.constant(Tensor::zeros([1, 4]))).collect(),
            (0..3).map(|_| g.constant(Tensor::zeros([4, 1]))).collect(),
        ];
        let y = gcn_block(&mut g, a, x, &zeros).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let one = vec![vec![g.constant(Tensor::ones([1, 1]))]];
        let y = gcn_block(&mut g, a, x, &one).unwrap();
        let doubled: Vec<f64> = g.value(x).data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(g.value(y).data(), doubled.as_slice());

        let wrong = g.constant(Tensor::zeros([1, 2, 4]));
        assert!(matches!(gcn_block(&mut g, a, wrong, &one), Err(Error::NodeCountMismatch { expected: 3, got: 4 })));
    }

    #[test]
    fn transition_matrix_row_normalizes_with_self_loops() {
        let a = t(&[2, 2], &[0., 1., 0., 0.]);
        let p = transition_matrix(&a).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5, 0., 1.]);
    }

    #[test]
    fn channel_plan() {
        assert_eq!(GcnConfig::default().channel_plan(), vec![1, 16, 1]);
        assert_eq!(GcnConfig { layers: 1, ..Default::default() }.channel_plan(), vec![1, 1]);
    }
}
