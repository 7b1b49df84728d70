//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation executed during one forward pass in
//! execution order, which is also a topological order. [`Graph::backward`]
//! walks the record in reverse and accumulates `d loss / d node` into every
//! leaf created with `requires_grad`. The graph is rebuilt for each forward
//! pass and may be differentiated only once.
//!
//! Binary elementwise ops (`add`, `sub`, `mul`) accept a right operand whose
//! shape is a suffix of the left operand's shape; it is broadcast over the
//! leading axes (bias vectors, positional tables).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::tensor::{check_shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    BatchMatMul { a: Var, b: Var, batch: usize, a_batched: bool, b_batched: bool, m: usize, k: usize, n: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Relu(Var),
    Gelu(Var),
    Softmax { x: Var },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    MaxPool { x: Var, argmax: Vec<usize> },
    Linear { x: Var, w: Var, b: Option<Var>, rows: usize, d_in: usize, d_out: usize },
    Attention { q: Var, k: Var, v: Var, dims: AttentionDims, probs: Vec<f64> },
    Diffusion { p: Var, x: Var, weights: Vec<Var>, groups: usize, nodes: usize, c_in: usize, c_out: usize },
}

#[derive(Clone, Copy, Debug)]
struct AttentionDims {
    batch: usize,
    lq: usize,
    lk: usize,
    heads: usize,
    d_head: usize,
    causal: bool,
}

impl AttentionDims {
    fn width(&self) -> usize {
        self.heads * self.d_head
    }

    fn visible(&self, i: usize) -> usize {
        if self.causal { (i + 1).min(self.lk) } else { self.lk }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Ordered record of executed operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf: its gradient is kept after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { op: op_name });
        }
        let requires_grad = op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value: Tensor::from_parts(shape, data), op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul { a, b, m, k, n })
    }

    /// Batched matrix product of `[G×m×k]` and `[G×k×n]`. Either operand may
    /// have batch extent 1, in which case it is shared across the batch.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[2] != sb[1] || (sa[0] != sb[0] && sa[0] != 1 && sb[0] != 1) {
            return Err(Error::shape("bmm", format!("{:?} x {:?}", sa, sb)));
        }
        let batch = sa[0].max(sb[0]);
        let (a_batched, b_batched) = (sa[0] != 1 || batch == 1, sb[0] != 1 || batch == 1);
        let (m, k, n) = (sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for g in 0..batch {
            let ao = if a_batched { g * m * k } else { 0 };
            let bo = if b_batched { g * k * n } else { 0 };
            gemm_nn(&ad[ao..ao + m * k], &bd[bo..bo + k * n], &mut out[g * m * n..(g + 1) * m * n], m, k, n);
        }
        self.push("bmm", vec![batch, m, n], out, Op::BatchMatMul { a, b, batch, a_batched, b_batched, m, k, n })
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("{:?} with {:?}", sa, sb)));
        }
        Ok(())
    }

    fn zip_broadcast(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let r = bd.len();
        ad.iter().enumerate().map(|(i, &x)| f(x, bd[i % r])).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x + y);
        self.push("add", self.shape(a).to_vec(), out, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("sub", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x - y);
        self.push("sub", self.shape(a).to_vec(), out, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let out = self.zip_broadcast(a, b, |x, y| x * y);
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).data().iter().map(|v| v * factor).collect();
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale { x, factor })
    }

    /// Elementwise `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        self.push("relu", self.shape(x).to_vec(), out, Op::Relu(x))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        self.push("gelu", self.shape(x).to_vec(), out, Op::Gelu(x))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::shape("softmax_rows", format!("expected 2-D, got {:?}", self.shape(x))));
        }
        self.softmax_last(x, false)
    }

    /// Softmax over the last axis. With `causal`, entry `(i, j)` of each
    /// trailing matrix is masked to probability 0 whenever `j > i`.
    pub fn softmax_last(&mut self, x: Var, causal: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if causal && shape.len() < 2 {
            return Err(Error::shape("softmax_last", "causal mask needs at least 2 axes"));
        }
        let cols = shape[shape.len() - 1];
        let rows_per_matrix = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        for (r, (row, o)) in xd.chunks(cols).zip(out.chunks_mut(cols)).enumerate() {
            let visible = if causal { (r % rows_per_matrix + 1).min(cols) } else { cols };
            let max = row[..visible].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (oj, &xj) in o[..visible].iter_mut().zip(&row[..visible]) {
                *oj = libm::exp(xj - max);
                total += *oj;
            }
            for oj in &mut o[..visible] {
                *oj /= total;
            }
        }
        self.push("softmax", shape, out, Op::Softmax { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.value(x).data();
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push("mean", vec![1], vec![s], Op::Mean(x))
    }

    /// Sums out one axis (the axis is removed from the shape).
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", format!("axis {} of {:?}", axis, shape)));
        }
        let (outer, len, inner) = split_at_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut out_shape: Vec<usize> = shape.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        self.push("sum_axis", out_shape, out, Op::SumAxis { x, axis })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(Error::shape("transpose", format!("expected 2-D, got {:?}", self.shape(x))));
        }
        self.permute(x, &[1, 0])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{:?} by {:?}", shape, perm)));
        }
        let (out_shape, out) = permute_data(&shape, self.value(x).data(), perm);
        self.push("permute", out_shape, out, Op::Permute { x, perm: perm.to_vec() })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape("reshape", shape)?;
        if shape.iter().product::<usize>() != self.value(x).numel() {
            return Err(Error::shape("reshape", format!("{:?} as {:?}", self.shape(x), shape)));
        }
        let data = self.value(x).data().to_vec();
        self.push("reshape", shape.to_vec(), data, Op::Reshape(x))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&p) => self.shape(p).to_vec(),
            None => return Err(Error::shape("concat", "no inputs")),
        };
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {} of {:?}", axis, first)));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {}", s, first, axis)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let chunk = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push("concat", shape, out, Op::Concat { parts: parts.to_vec(), axis })
    }

    /// `len` consecutive entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape("slice", format!("[{}..{}) on axis {} of {:?}", start, start + len, axis, shape)));
        }
        let (outer, full, inner) = split_at_axis(&shape, axis);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&xd[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        self.push("slice", out_shape, out, Op::Slice { x, axis, start })
    }

    /// Normalizes the last axis to zero mean and unit (population) variance,
    /// then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = shape[shape.len() - 1];
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape("layer_norm", format!("affine params must be [{}]", d)));
        }
        let (xd, gd, bd) = (self.value(x).data(), self.value(gamma).data(), self.value(beta).data());
        let rows = xd.len() / d;
        let mut xhat = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mu) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = gd[j] * h + bd[j];
            }
        }
        self.push("layer_norm", shape, out, Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    /// Max-pooling with window 2 and stride 2 along axis 1 of a 3-D tensor.
    /// An odd trailing element forms its own window, so the output length is
    /// `ceil(L / 2)`.
    pub fn max_pool_halve(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("max_pool_halve", format!("expected 3-D, got {:?}", shape)));
        }
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let lo = l.div_ceil(2);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(b * lo * d);
        let mut argmax = Vec::with_capacity(b * lo * d);
        for bi in 0..b {
            for t in 0..lo {
                for j in 0..d {
                    let i0 = (bi * l + 2 * t) * d + j;
                    let mut best = i0;
                    if 2 * t + 1 < l && xd[i0 + d] > xd[i0] {
                        best = i0 + d;
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        self.push("max_pool_halve", vec![b, lo, d], out, Op::MaxPool { x, argmax })
    }

    /// `x · W (+ b)` over the last axis: `[…×d_in] · [d_in×d_out] → […×d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sw.len() != 2 || sx.last() != Some(&sw[0]) {
            return Err(Error::shape("linear", format!("{:?} x {:?}", sx, sw)));
        }
        let (d_in, d_out) = (sw[0], sw[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::shape("linear", format!("bias {:?} for width {}", self.shape(b), d_out)));
            }
        }
        let rows = self.value(x).numel() / d_in;
        let mut out = match b {
            Some(b) => self.value(b).data().repeat(rows),
            None => vec![0.0; rows * d_out],
        };
        gemm_nn(self.value(x).data(), self.value(w).data(), &mut out, rows, d_in, d_out);
        let mut shape = self.shape(x).to_vec();
        *shape.last_mut().unwrap() = d_out;
        self.push("linear", shape, out, Op::Linear { x, w, b, rows, d_in, d_out })
    }

    /// Multi-head scaled dot-product attention on already projected inputs.
    ///
    /// `q: B×Lq×D`, `k`, `v: B×Lk×D` with `D = heads · d_head`; head `h`
    /// uses channels `h·d_head .. (h+1)·d_head`. Returns `B×Lq×D` holding
    /// `softmax(Q_h K_hᵀ / √d_head) V_h` per head. With `causal`, query `i`
    /// sees keys `j ≤ i` only.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        if sq.len() != 3 || sk != sv || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] || heads == 0 || sq[2] % heads != 0 {
            return Err(Error::shape("attention", format!("q {:?}, k {:?}, v {:?}, {} heads", sq, sk, sv, heads)));
        }
        let dims = AttentionDims { batch: sq[0], lq: sq[1], lk: sk[1], heads, d_head: sq[2] / heads, causal };
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let (d, dh, lq, lk) = (dims.width(), dims.d_head, dims.lq, dims.lk);
        let scale = 1.0 / libm::sqrt(dh as f64);
        let mut probs = vec![0.0; dims.batch * heads * lq * lk];
        let mut out = vec![0.0; dims.batch * lq * d];
        for b in 0..dims.batch {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..lq {
                    let visible = dims.visible(i);
                    let p = &mut probs[((b * heads + h) * lq + i) * lk..][..lk];
                    let qi = &qd[(b * lq + i) * d + c0..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, pj) in p[..visible].iter_mut().enumerate() {
                        let kj = &kd[(b * lk + j) * d + c0..][..dh];
                        *pj = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                        max = max.max(*pj);
                    }
                    let mut total = 0.0;
                    for pj in &mut p[..visible] {
                        *pj = libm::exp(*pj - max);
                        total += *pj;
                    }
                    let o = &mut out[(b * lq + i) * d + c0..][..dh];
                    for (j, pj) in p[..visible].iter_mut().enumerate() {
                        *pj /= total;
                        let vj = &vd[(b * lk + j) * d + c0..][..dh];
                        for (oc, vc) in o.iter_mut().zip(vj) {
                            *oc += *pj * vc;
                        }
                    }
                }
            }
        }
        self.push("attention", vec![dims.batch, lq, d], out, Op::Attention { q, k, v, dims, probs })
    }

    /// `Σ_k Pᵏ X_g W_k` for every group `g` of `x: G×N×C_in`, with `p: N×N`
    /// and `weights[k]: C_in×C_out`. Powers are applied to the signal one
    /// step at a time and each group is processed in cache.
    pub fn diffusion(&mut self, p: Var, x: Var, weights: &[Var]) -> Result<Var> {
        let (sp, sx) = (self.shape(p), self.shape(x));
        if sp.len() != 2 || sp[0] != sp[1] || sx.len() != 3 || sx[1] != sp[0] {
            return Err(Error::shape("diffusion", format!("p {:?}, x {:?}", sp, sx)));
        }
        let (groups, nodes, c_in) = (sx[0], sx[1], sx[2]);
        let Some(&w0) = weights.first() else {
            return Err(Error::shape("diffusion", "need at least one weight matrix"));
        };
        let sw = self.shape(w0).to_vec();
        if sw.len() != 2 || sw[0] != c_in || weights.iter().any(|&w| self.shape(w) != sw.as_slice()) {
            return Err(Error::shape("diffusion", format!("weights must all be {}×C_out, first is {:?}", c_in, sw)));
        }
        let c_out = sw[1];
        let pd = self.value(p).data();
        let xd = self.value(x).data();
        let wd: Vec<&[f64]> = weights.iter().map(|&w| self.value(w).data()).collect();
        let (gin, gout) = (nodes * c_in, nodes * c_out);
        let mut out = vec![0.0; groups * gout];
        let mut power = vec![0.0; gin];
        let mut next = vec![0.0; gin];
        for g in 0..groups {
            power.copy_from_slice(&xd[g * gin..(g + 1) * gin]);
            let z = &mut out[g * gout..(g + 1) * gout];
            for (k, w) in wd.iter().enumerate() {
                if k > 0 {
                    next.iter_mut().for_each(|v| *v = 0.0);
                    gemm_nn(pd, &power, &mut next, nodes, nodes, c_in);
                    core::mem::swap(&mut power, &mut next);
                }
                gemm_nn(&power, w, z, nodes, c_in, c_out);
            }
        }
        let op = Op::Diffusion { p, x, weights: weights.to_vec(), groups, nodes, c_in, c_out };
        self.push("diffusion", vec![groups, nodes, c_out], out, op)
    }

    /// Reverse pass from a scalar `loss`. Fills the gradient of every leaf
    /// created with `requires_grad`. May run once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::GraphConsumed);
        }
        let numel = self.value(loss).numel();
        if numel != 1 {
            return Err(Error::NotScalarLoss { numel });
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].grad = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |ga| gemm_nt(g, bd, ga, m, n, k));
                self.accumulate(grads, b, |gb| gemm_tn(ad, g, gb, m, k, n));
            }
            &Op::BatchMatMul { a, b, batch, a_batched, b_batched, m, k, n } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                self.accumulate(grads, a, |ga| {
                    for gi in 0..batch {
                        let ao = if a_batched { gi * m * k } else { 0 };
                        let bo = if b_batched { gi * k * n } else { 0 };
                        gemm_nt(&g[gi * m * n..(gi + 1) * m * n], &bd[bo..bo + k * n], &mut ga[ao..ao + m * k], m, n, k);
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for gi in 0..batch {
                        let ao = if a_batched { gi * m * k } else { 0 };
                        let bo = if b_batched { gi * k * n } else { 0 };
                        gemm_tn(&ad[ao..ao + m * k], &g[gi * m * n..(gi + 1) * m * n], &mut gb[bo..bo + k * n], m, k, n);
                    }
                });
            }
            &Op::Add { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| reduce_broadcast(gb, g, 1.0));
            }
            &Op::Sub { a, b } => {
                self.accumulate(grads, a, |ga| add_into(ga, g));
                self.accumulate(grads, b, |gb| reduce_broadcast(gb, g, -1.0));
            }
            &Op::Mul { a, b } => {
                let (ad, bd) = (self.value(a).data(), self.value(b).data());
                let r = bd.len();
                self.accumulate(grads, a, |ga| {
                    for (j, (o, gj)) in ga.iter_mut().zip(g).enumerate() {
                        *o += gj * bd[j % r];
                    }
                });
                self.accumulate(grads, b, |gb| {
                    for (j, (gj, aj)) in g.iter().zip(ad).enumerate() {
                        gb[j % r] += gj * aj;
                    }
                });
            }
            &Op::Scale { x, factor } => {
                self.accumulate(grads, x, |gx| {
                    for (o, gj) in gx.iter_mut().zip(g) {
                        *o += factor * gj;
                    }
                });
            }
            &Op::Relu(x) => {
                let xd = self.value(x).data();
                self.accumulate(grads, x, |gx| {
                    for ((o, gj), &xj) in gx.iter_mut().zip(g).zip(xd) {
                        if xj > 0.0 {
                            *o += gj;
                        }
                    }
                });
            }
            &Op::Gelu(x) => {
                let xd = self.value(x).data();
                self.accumulate(grads, x, |gx| {
                    for ((o, gj), &xj) in gx.iter_mut().zip(g).zip(xd) {
                        *o += gj * gelu_grad(xj);
                    }
                });
            }
            &Op::Softmax { x, .. } => {
                let cols = *node.value.shape().last().unwrap();
                self.accumulate(grads, x, |gx| {
                    for ((grow, yrow), orow) in g.chunks(cols).zip(y.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let s: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((o, gj), yj) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o += yj * (gj - s);
                        }
                    }
                });
            }
            &Op::Sum(x) => {
                self.accumulate(grads, x, |gx| gx.iter_mut().for_each(|o| *o += g[0]));
            }
            &Op::Mean(x) => {
                let scale = g[0] / self.value(x).numel() as f64;
                self.accumulate(grads, x, |gx| gx.iter_mut().for_each(|o| *o += scale));
            }
            &Op::SumAxis { x, axis } => {
                let (outer, len, inner) = split_at_axis(self.shape(x), axis);
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            add_into(&mut gx[(o * len + l) * inner..(o * len + l + 1) * inner], src);
                        }
                    }
                });
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inverse[p] = i;
                }
                let (_, back) = permute_data(node.value.shape(), g, &inverse);
                self.accumulate(grads, *x, |gx| add_into(gx, &back));
            }
            &Op::Reshape(x) => {
                self.accumulate(grads, x, |gx| add_into(gx, g));
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = split_at_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p)[*axis];
                    self.accumulate(grads, p, |gp| {
                        for o in 0..outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            add_into(&mut gp[o * len * inner..(o + 1) * len * inner], src);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice { x, axis, start } => {
                let (outer, full, inner) = split_at_axis(self.shape(x), axis);
                let len = node.value.shape()[axis];
                self.accumulate(grads, x, |gx| {
                    for o in 0..outer {
                        let base = (o * full + start) * inner;
                        add_into(&mut gx[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gd = self.value(*gamma).data();
                let d = gd.len();
                self.accumulate(grads, *x, |gx| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gr[j] * gd[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            gx[r * d + j] += inv * (gr[j] * gd[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |gg| {
                    for (j, (gj, hj)) in g.iter().zip(xhat).enumerate() {
                        gg[j % d] += gj * hj;
                    }
                });
                self.accumulate(grads, *beta, |gb| reduce_broadcast(gb, g, 1.0));
            }
            Op::MaxPool { x, argmax } => {
                self.accumulate(grads, *x, |gx| {
                    for (&src, gj) in argmax.iter().zip(g) {
                        gx[src] += gj;
                    }
                });
            }
            &Op::Linear { x, w, b, rows, d_in, d_out } => {
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                self.accumulate(grads, x, |gx| gemm_nt(g, wd, gx, rows, d_out, d_in));
                self.accumulate(grads, w, |gw| gemm_tn(xd, g, gw, rows, d_in, d_out));
                if let Some(b) = b {
                    self.accumulate(grads, b, |gb| reduce_broadcast(gb, g, 1.0));
                }
            }
            Op::Diffusion { p, x, weights, groups, nodes, c_in, c_out } => {
                let (dp, dx, dw) = self.diffusion_backward(*p, *x, weights, *groups, *nodes, *c_in, *c_out, g);
                self.accumulate(grads, *p, |gp| add_into(gp, &dp));
                self.accumulate(grads, *x, |gx| add_into(gx, &dx));
                for (&w, dwk) in weights.iter().zip(&dw) {
                    self.accumulate(grads, w, |gw| add_into(gw, dwk));
                }
            }
            Op::Attention { q, k, v, dims, probs } => {
                let (dq, dk, dv) = self.attention_backward(*q, *k, *v, dims, probs, g);
                self.accumulate(grads, *q, |gq| add_into(gq, &dq));
                self.accumulate(grads, *k, |gk| add_into(gk, &dk));
                self.accumulate(grads, *v, |gv| add_into(gv, &dv));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn diffusion_backward(
        &self,
        p: Var,
        x: Var,
        weights: &[Var],
        groups: usize,
        nodes: usize,
        c_in: usize,
        c_out: usize,
        g: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let pd = self.value(p).data();
        let xd = self.value(x).data();
        let wd: Vec<&[f64]> = weights.iter().map(|&w| self.value(w).data()).collect();
        let terms = weights.len();
        let (gin, gout) = (nodes * c_in, nodes * c_out);
        let mut dp = vec![0.0; nodes * nodes];
        let mut dx = vec![0.0; groups * gin];
        let mut dw = vec![vec![0.0; c_in * c_out]; terms];
        // powers[k] = Pᵏ X_g
        let mut powers = vec![0.0; terms * gin];
        let mut upstream = vec![0.0; gin];
        let mut carry = vec![0.0; gin];
        for grp in 0..groups {
            let gz = &g[grp * gout..(grp + 1) * gout];
            powers[..gin].copy_from_slice(&xd[grp * gin..(grp + 1) * gin]);
            for k in 1..terms {
                let (prev, rest) = powers.split_at_mut(k * gin);
                let cur = &mut rest[..gin];
                cur.iter_mut().for_each(|v| *v = 0.0);
                gemm_nn(pd, &prev[(k - 1) * gin..], cur, nodes, nodes, c_in);
            }
            // Walk the powers backwards: U_k = dZ W_kᵀ + Pᵀ U_{k+1}.
            carry.iter_mut().for_each(|v| *v = 0.0);
            for k in (0..terms).rev() {
                let tk = &powers[k * gin..(k + 1) * gin];
                gemm_tn(tk, gz, &mut dw[k], nodes, c_in, c_out);
                upstream.copy_from_slice(&carry);
                gemm_nt(gz, wd[k], &mut upstream, nodes, c_out, c_in);
                if k > 0 {
                    gemm_nt(&upstream, &powers[(k - 1) * gin..k * gin], &mut dp, nodes, c_in, nodes);
                    carry.iter_mut().for_each(|v| *v = 0.0);
                    gemm_tn(pd, &upstream, &mut carry, nodes, nodes, c_in);
                }
            }
            add_into(&mut dx[grp * gin..(grp + 1) * gin], &upstream);
        }
        (dp, dx, dw)
    }

    fn attention_backward(&self, q: Var, k: Var, v: Var, dims: &AttentionDims, probs: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let (d, dh, lq, lk, heads) = (dims.width(), dims.d_head, dims.lq, dims.lk, dims.heads);
        let scale = 1.0 / libm::sqrt(dh as f64);
        let (mut dq, mut dk, mut dv) = (vec![0.0; qd.len()], vec![0.0; kd.len()], vec![0.0; vd.len()]);
        let mut ds = vec![0.0; lk];
        for b in 0..dims.batch {
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..lq {
                    let visible = dims.visible(i);
                    let p = &probs[((b * heads + h) * lq + i) * lk..][..visible];
                    let gi = &g[(b * lq + i) * d + c0..][..dh];
                    let mut dot_pg = 0.0;
                    for (j, &pj) in p.iter().enumerate() {
                        let row = (b * lk + j) * d + c0;
                        let dp: f64 = gi.iter().zip(&vd[row..row + dh]).map(|(x, y)| x * y).sum();
                        for (o, gc) in dv[row..row + dh].iter_mut().zip(gi) {
                            *o += pj * gc;
                        }
                        ds[j] = dp;
                        dot_pg += pj * dp;
                    }
                    let qrow = (b * lq + i) * d + c0;
                    for (j, &pj) in p.iter().enumerate() {
                        let dsj = scale * pj * (ds[j] - dot_pg);
                        let row = (b * lk + j) * d + c0;
                        for c in 0..dh {
                            dq[qrow + c] += dsj * kd[row + c];
                            dk[row + c] += dsj * qd[qrow + c];
                        }
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        f(grads[v.0].get_or_insert_with(|| vec![0.0; n]));
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => Vec::new(),
        Op::MatMul { a, b, .. } | Op::BatchMatMul { a, b, .. } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
            vec![*a, *b]
        }
        Op::Scale { x, .. }
        | Op::Relu(x)
        | Op::Gelu(x)
        | Op::Softmax { x, .. }
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::SumAxis { x, .. }
        | Op::Permute { x, .. }
        | Op::Reshape(x)
        | Op::Slice { x, .. }
        | Op::MaxPool { x, .. } => vec![*x],
        Op::Concat { parts, .. } => parts.clone(),
        Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
        Op::Linear { x, w, b, .. } => {
            let mut v = vec![*x, *w];
            v.extend(*b);
            v
        }
        Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        Op::Diffusion { p, x, weights, .. } => {
            let mut v = vec![*p, *x];
            v.extend_from_slice(weights);
            v
        }
    }
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn permute_data(shape: &[usize], data: &[f64], perm: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..data.len() {
        out.push(data[src]);
        // Odometer increment over output indices, tracking the source offset.
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    (out_shape, out)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn reduce_broadcast(dst: &mut [f64], g: &[f64], sign: f64) {
    let r = dst.len();
    for (j, gj) in g.iter().enumerate() {
        dst[j % r] += sign * gj;
    }
}

const FRAC_1_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = libm::exp(-0.5 * x * x) * 0.5 * core::f64::consts::FRAC_2_SQRT_PI * FRAC_1_SQRT_2;
    cdf + x * pdf
}
