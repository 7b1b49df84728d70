use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::attention::MultiHeadAttention;
use super::layers::{FeedForward, LayerNorm};
use crate::autograd::Var;
use crate::error::Result;
use crate::params::{ParamStore, Session};

/// Post-norm self-attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn init(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderLayer {
            attention: MultiHeadAttention::init(store, &format!("{name}.attn"), d_model, n_heads, rng),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), d_model, d_ff, rng),
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let a = self.attention.forward(s, x, x, x, false)?;
        let a = s.dropout(a)?;
        let x = s.graph().add(x, a)?;
        let x = self.norm1.forward(s, x)?;
        let y = self.ffn.forward(s, x)?;
        let y = s.dropout(y)?;
        let x = s.graph().add(x, y)?;
        self.norm2.forward(s, x)
    }
}

/// A stack of encoder layers with stride-2 max-pooling interleaved. The
/// stack pools after each layer while `pools` remain, then pools any
/// remainder at the end, and finishes with a layer norm.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
    pub pools: usize,
    pub norm: LayerNorm,
}

impl EncoderStack {
    pub fn forward(&self, s: &mut Session, mut x: Var) -> Result<Var> {
        let mut pooled = 0;
        for layer in &self.layers {
            x = layer.forward(s, x)?;
            if pooled < self.pools {
                x = s.graph().max_pool_halve(x)?;
                pooled += 1;
            }
        }
        while pooled < self.pools {
            x = s.graph().max_pool_halve(x)?;
            pooled += 1;
        }
        self.norm.forward(s, x)
    }
}
