use alloc::format;

use rand_chacha::ChaCha8Rng;

use super::attention::MultiHeadAttention;
use super::layers::{FeedForward, LayerNorm};
use crate::autograd::Var;
use crate::error::Result;
use crate::params::{ParamStore, Session};

/// Causal self-attention, cross-attention over the encoder output, then the
/// feed-forward block; each sublayer is residual and post-normalized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub cross_attention: MultiHeadAttention,
    pub ffn: FeedForward,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn init(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        DecoderLayer {
            self_attention: MultiHeadAttention::init(store, &format!("{name}.self_attn"), d_model, n_heads, rng),
            cross_attention: MultiHeadAttention::init(store, &format!("{name}.cross_attn"), d_model, n_heads, rng),
            ffn: FeedForward::init(store, &format!("{name}.ffn"), d_model, d_ff, rng),
            norm1: LayerNorm::init(store, &format!("{name}.norm1"), d_model),
            norm2: LayerNorm::init(store, &format!("{name}.norm2"), d_model),
            norm3: LayerNorm::init(store, &format!("{name}.norm3"), d_model),
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var, memory: Var) -> Result<Var> {
        let a = self.self_attention.forward(s, x, x, x, true)?;
        let a = s.dropout(a)?;
        let x = s.graph().add(x, a)?;
        let x = self.norm1.forward(s, x)?;
        let c = self.cross_attention.forward(s, x, memory, memory, false)?;
        let c = s.dropout(c)?;
        let x = s.graph().add(x, c)?;
        let x = self.norm2.forward(s, x)?;
        let y = self.ffn.forward(s, x)?;
        let y = s.dropout(y)?;
        let x = s.graph().add(x, y)?;
        self.norm3.forward(s, x)
    }
}
