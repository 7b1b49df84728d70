use alloc::format;

use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::error::Result;
use crate::params::{uniform, ParamId, ParamStore, Session};
use crate::tensor::Tensor;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// `x · W (+ b)` over the last axis of any-rank input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    /// Weight and bias uniform on `±1/√d_in`.
    pub fn init(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / libm::sqrt(d_in as f64);
        let weight = store.add(format!("{name}.weight"), uniform(&[d_in, d_out], bound, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(&[d_out], bound, rng)));
        Linear { weight, bias, d_in, d_out }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.weight), self.bias.map(|b| s.param(b)));
        s.graph().linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones([d])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros([d])),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let (gamma, beta) = (s.param(self.gamma), s.param(self.beta));
        s.graph().layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }
}

/// Position-wise `Linear → GELU → dropout → Linear`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn init(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FeedForward {
            inner: Linear::init(store, &format!("{name}.inner"), d_model, d_ff, true, rng),
            outer: Linear::init(store, &format!("{name}.outer"), d_ff, d_model, true, rng),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let h = self.inner.forward(s, x)?;
        let h = s.graph().gelu(h)?;
        let h = s.dropout(h)?;
        self.outer.forward(s, h)
    }
}
