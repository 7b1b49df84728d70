use alloc::format;

use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};

/// Multi-head scaled dot-product attention with full (dense) score matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn init(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, rng: &mut ChaCha8Rng) -> Self {
        MultiHeadAttention {
            query: Linear::init(store, &format!("{name}.query"), d_model, d_model, true, rng),
            key: Linear::init(store, &format!("{name}.key"), d_model, d_model, true, rng),
            value: Linear::init(store, &format!("{name}.value"), d_model, d_model, true, rng),
            output: Linear::init(store, &format!("{name}.output"), d_model, d_model, true, rng),
            n_heads,
            d_model,
        }
    }

    /// `q: B×Lq×d`, `k`/`v: B×Lk×d`. Per head computes
    /// `softmax(Q Kᵀ / √d_head) V`; heads are concatenated and projected.
    /// With `causal`, query `i` only sees keys `j ≤ i`.
    pub fn forward(&self, s: &mut Session, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
        let (qs, ks, vs) = {
            let g = s.graph_ref();
            (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec())
        };
        let d = self.d_model;
        if qs.len() != 3 || ks.len() != 3 || ks != vs || qs[0] != ks[0] || qs[2] != d || ks[2] != d {
            return Err(Error::shape("multi_head_attention", format!("q {:?}, k {:?}, v {:?}", qs, ks, vs)));
        }
        if causal && qs[1] != ks[1] {
            return Err(Error::shape("multi_head_attention", "causal attention needs equal query and key lengths"));
        }
        let q = self.query.forward(s, q)?;
        let k = self.key.forward(s, k)?;
        let v = self.value.forward(s, v)?;
        let ctx = s.graph().attention(q, k, v, self.n_heads, causal)?;
        self.output.forward(s, ctx)
    }
}
