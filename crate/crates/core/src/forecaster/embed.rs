use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use super::layers::Linear;
use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{ParamStore, Session};
use crate::tensor::Tensor;

/// Fixed sinusoidal table `L×d`: `sin(p / 10000^(2i/d))` on even columns and
/// the matching cosine on odd columns.
pub fn positional_encoding(len: usize, d_model: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d_model);
    for pos in 0..len {
        for j in 0..d_model {
            let rate = libm::pow(10000.0, -((j - j % 2) as f64) / d_model as f64);
            let angle = pos as f64 * rate;
            data.push(if j % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) });
        }
    }
    Tensor::from_parts(alloc::vec![len, d_model], data)
}

/// Value projection + positional encoding + calendar-feature projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataEmbedding {
    pub value: Linear,
    pub time: Linear,
    pub d_model: usize,
}

impl DataEmbedding {
    pub fn init(store: &mut ParamStore, name: &str, n_dims: usize, n_marks: usize, d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        DataEmbedding {
            value: Linear::init(store, &format!("{name}.value"), n_dims, d_model, false, rng),
            time: Linear::init(store, &format!("{name}.time"), n_marks, d_model, false, rng),
            d_model,
        }
    }

    /// `x: B×L×N`, `marks: B×L×T` → `B×L×d_model`.
    pub fn forward(&self, s: &mut Session, x: Var, marks: Var) -> Result<Var> {
        let (xs, ms) = (s.graph_ref().shape(x).to_vec(), s.graph_ref().shape(marks).to_vec());
        if xs.len() != 3 || ms.len() != 3 || xs[..2] != ms[..2] || xs[2] != self.value.d_in || ms[2] != self.time.d_in {
            return Err(Error::shape("embed", format!("values {:?}, marks {:?}", xs, ms)));
        }
        let v = self.value.forward(s, x)?;
        let t = self.time.forward(s, marks)?;
        let g = s.graph();
        let pe = g.constant(positional_encoding(xs[1], self.d_model));
        let e = g.add(v, pe)?;
        let e = g.add(e, t)?;
        s.dropout(e)
    }
}
