//! Attention encoder–decoder forecaster with optional adaptive graph blocks.
//!
//! Data flow for one batch:
//!
//! ```text
//! x_enc ─[gcn block]─ embed ─ main stack (layer, pool, layer, pool, layer) ─┐
//!                          └─ last half ─ aux stack (layer, pool) ─────────┴─ concat ─┐
//! [x_dec_known ‖ zeros] ─[gcn block]─ embed ─ decoder layers ─ norm ─ projection ─────┴─> last pred_len steps
//! ```
//!
//! Both graph blocks operate in the raw `N`-channel space and share one
//! adaptive adjacency; with `use_gcn = false` they are absent and no graph
//! parameters exist.

mod attention;
mod decoder;
mod embed;
mod encoder;
mod layers;

use alloc::format;
use alloc::vec::Vec;

pub use attention::MultiHeadAttention;
pub use decoder::DecoderLayer;
pub use embed::{positional_encoding, DataEmbedding};
pub use encoder::{EncoderLayer, EncoderStack};
pub use layers::{FeedForward, LayerNorm, Linear};

use crate::autograd::Var;
use crate::data::{Batch, WindowSpec, TIME_FEATURES};
use crate::error::{Error, Result};
use crate::graph_conv::{AdaptiveAdjacency, GcnBlock, GcnConfig};
use crate::params::{ParamStore, Session};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AttentionKind {
    /// Dense `O(L²)` scaled dot-product attention.
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub n_dims: usize,
    pub seq_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub enc_layers_main: usize,
    pub enc_layers_aux: usize,
    pub dec_layers: usize,
    pub dropout: f64,
    pub attention: AttentionKind,
    pub gcn: GcnConfig,
    pub use_gcn: bool,
}

impl ModelConfig {
    /// Defaults for a series with `n_dims` variables. `label_len` is 48 for
    /// inputs of at least 96 steps and `seq_len / 2` otherwise.
    pub fn new(n_dims: usize, seq_len: usize, pred_len: usize) -> Self {
        ModelConfig {
            n_dims,
            seq_len,
            label_len: default_label_len(seq_len),
            pred_len,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            enc_layers_main: 3,
            enc_layers_aux: 1,
            dec_layers: 2,
            dropout: 0.05,
            attention: AttentionKind::Full,
            gcn: GcnConfig::default(),
            use_gcn: true,
        }
    }

    pub fn window(&self) -> WindowSpec {
        WindowSpec { seq_len: self.seq_len, label_len: self.label_len, pred_len: self.pred_len }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &'static str, reason: &str| Err(Error::InvalidConfig { key, reason: reason.into() });
        if self.n_dims == 0 {
            return bad("n_dims", "must be at least 1");
        }
        if self.seq_len == 0 {
            return bad("seq_len", "must be at least 1");
        }
        if self.pred_len == 0 {
            return bad("pred_len", "must be at least 1");
        }
        if self.label_len > self.seq_len {
            return Err(Error::LabelLongerThanInput { label_len: self.label_len, seq_len: self.seq_len });
        }
        if self.label_len == 0 {
            return bad("label_len", "must be at least 1");
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad("d_model", "must be a positive multiple of n_heads");
        }
        if self.d_ff == 0 {
            return bad("d_ff", "must be at least 1");
        }
        if self.enc_layers_main == 0 || self.dec_layers == 0 {
            return bad("enc_layers_main", "encoder and decoder need at least one layer each");
        }
        if self.enc_layers_aux > 0 && (self.enc_layers_main < 2 || self.enc_layers_aux >= self.enc_layers_main) {
            return bad("enc_layers_aux", "auxiliary stack must be shallower than the main stack, which needs ≥ 2 layers");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", "must lie in [0, 1)");
        }
        if self.use_gcn && (self.gcn.hidden == 0 || self.gcn.embed_dim == 0 || self.gcn.layers == 0) {
            return bad("gcn", "hidden, embed_dim and layers must be at least 1");
        }
        Ok(())
    }

    /// Length of the encoder output after pooling and concatenation.
    pub fn encoder_out_len(&self) -> usize {
        let mut main = self.seq_len;
        for _ in 1..self.enc_layers_main {
            main = main.div_ceil(2);
        }
        if self.enc_layers_aux > 0 {
            2 * main
        } else {
            main
        }
    }
}

pub fn default_label_len(seq_len: usize) -> usize {
    if seq_len >= 96 {
        48
    } else {
        (seq_len / 2).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct GraphModules {
    adjacency: AdaptiveAdjacency,
    encoder_block: GcnBlock,
    decoder_block: GcnBlock,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct Layout {
    enc_embed: DataEmbedding,
    dec_embed: DataEmbedding,
    main: EncoderStack,
    aux: Option<EncoderStack>,
    decoder: Vec<DecoderLayer>,
    dec_norm: LayerNorm,
    projection: Linear,
    graph: Option<GraphModules>,
}

impl Layout {
    fn build(cfg: &ModelConfig, store: &mut ParamStore, seed: u64) -> Self {
        let mut rng = stream_rng(seed, Stream::HostInit);
        let (n, d, h, ff) = (cfg.n_dims, cfg.d_model, cfg.n_heads, cfg.d_ff);
        let enc_embed = DataEmbedding::init(store, "enc.embed", n, TIME_FEATURES, d, &mut rng);
        let dec_embed = DataEmbedding::init(store, "dec.embed", n, TIME_FEATURES, d, &mut rng);
        let main = EncoderStack {
            layers: (0..cfg.enc_layers_main)
                .map(|i| EncoderLayer::init(store, &format!("enc.main.{i}"), d, h, ff, &mut rng))
                .collect(),
            pools: cfg.enc_layers_main - 1,
            norm: LayerNorm::init(store, "enc.main.norm", d),
        };
        let aux = (cfg.enc_layers_aux > 0).then(|| EncoderStack {
            layers: (0..cfg.enc_layers_aux)
                .map(|i| EncoderLayer::init(store, &format!("enc.aux.{i}"), d, h, ff, &mut rng))
                .collect(),
            // The half-length view already saved one halving.
            pools: cfg.enc_layers_main - 2,
            norm: LayerNorm::init(store, "enc.aux.norm", d),
        });
        let decoder = (0..cfg.dec_layers)
            .map(|i| DecoderLayer::init(store, &format!("dec.{i}"), d, h, ff, &mut rng))
            .collect();
        let dec_norm = LayerNorm::init(store, "dec.norm", d);
        let projection = Linear::init(store, "projection", d, n, true, &mut rng);

        // Separate stream: host parameters are identical with or without graph blocks.
        let graph = cfg.use_gcn.then(|| {
            let mut rng = stream_rng(seed, Stream::GraphInit);
            GraphModules {
                adjacency: AdaptiveAdjacency::init(store, "gcn.adjacency", n, cfg.gcn.embed_dim, &mut rng),
                encoder_block: GcnBlock::init(store, "gcn.enc", n, &cfg.gcn, &mut rng),
                decoder_block: GcnBlock::init(store, "gcn.dec", n, &cfg.gcn, &mut rng),
            }
        });
        Layout { enc_embed, dec_embed, main, aux, decoder, dec_norm, projection, graph }
    }
}

/// The forecasting model: configuration, parameters and their wiring.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecaster {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Forecaster {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, seed);
        Ok(Forecaster { config, params, layout })
    }

    /// Rebuilds a model around stored parameters, which must match the
    /// configuration's layout name for name and shape for shape.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::ConfigMismatch(format!(
                "configuration expects {} parameter tensors, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((want_name, want), (name, got)) in model.params.iter().zip(params.iter()) {
            if want_name != name || want.shape() != got.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "expected `{}` {:?}, found `{}` {:?}",
                    want_name,
                    want.shape(),
                    name,
                    got.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn adjacency(&self) -> Option<&AdaptiveAdjacency> {
        self.layout.graph.as_ref().map(|g| &g.adjacency)
    }

    /// The learned row-stochastic adjacency, if graph blocks are enabled.
    pub fn adjacency_matrix(&self) -> Option<Result<Tensor>> {
        self.adjacency().map(|a| a.matrix(&self.params))
    }

    /// Embedding of `x: B×L×N` with calendar `marks: B×L×4` (encoder side).
    pub fn embed(&self, s: &mut Session, x: Var, marks: Var) -> Result<Var> {
        self.layout.enc_embed.forward(s, x, marks)
    }

    /// `x_enc: B×seq_len×N` → `B×L'×d_model`.
    pub fn encode(&self, s: &mut Session, x_enc: Var, marks_enc: Var, adjacency: Option<Var>) -> Result<Var> {
        let shape = s.graph_ref().shape(x_enc).to_vec();
        if shape.len() != 3 || shape[1] != self.config.seq_len || shape[2] != self.config.n_dims {
            return Err(Error::shape("encode", format!("expected B×{}×{}, got {:?}", self.config.seq_len, self.config.n_dims, shape)));
        }
        let mut x = x_enc;
        if let (Some(graph), Some(adj)) = (&self.layout.graph, adjacency) {
            x = graph.encoder_block.forward(s, adj, x)?;
        }
        let e = self.layout.enc_embed.forward(s, x, marks_enc)?;
        let main = self.layout.main.forward(s, e)?;
        let Some(aux) = &self.layout.aux else { return Ok(main) };
        let half = self.config.seq_len.div_ceil(2);
        let tail = s.graph().slice(e, 1, self.config.seq_len - half, half)?;
        let aux = aux.forward(s, tail)?;
        s.graph().concat(&[main, aux], 1)
    }

    /// Assembles `[x_dec_known ‖ zeros(pred_len)]`, decodes against
    /// `memory`, and returns the last `pred_len` steps as `B×pred_len×N`.
    pub fn decode(&self, s: &mut Session, x_dec_known: Var, marks_dec: Var, memory: Var, adjacency: Option<Var>) -> Result<Var> {
        let cfg = &self.config;
        let shape = s.graph_ref().shape(x_dec_known).to_vec();
        if shape.len() != 3 || shape[2] != cfg.n_dims {
            return Err(Error::shape("decode", format!("expected B×label_len×{}, got {:?}", cfg.n_dims, shape)));
        }
        if shape[1] > cfg.seq_len {
            return Err(Error::LabelLongerThanInput { label_len: shape[1], seq_len: cfg.seq_len });
        }
        if shape[1] != cfg.label_len {
            return Err(Error::shape("decode", format!("expected label_len {}, got {}", cfg.label_len, shape[1])));
        }
        let x = self.assemble_decoder_input(s, x_dec_known)?;
        let mut x = x;
        if let (Some(graph), Some(adj)) = (&self.layout.graph, adjacency) {
            x = graph.decoder_block.forward(s, adj, x)?;
        }
        let mut h = self.layout.dec_embed.forward(s, x, marks_dec)?;
        for layer in &self.layout.decoder {
            h = layer.forward(s, h, memory)?;
        }
        let h = self.layout.dec_norm.forward(s, h)?;
        let out = self.layout.projection.forward(s, h)?;
        s.graph().slice(out, 1, cfg.label_len, cfg.pred_len)
    }

    /// Decoder input before any graph block: known prefix, then zeros.
    pub fn assemble_decoder_input(&self, s: &mut Session, x_dec_known: Var) -> Result<Var> {
        let b = s.graph_ref().shape(x_dec_known)[0];
        let g = s.graph();
        let zeros = g.constant(Tensor::zeros([b, self.config.pred_len, self.config.n_dims]));
        g.concat(&[x_dec_known, zeros], 1)
    }

    /// Full forward pass, `B×pred_len×N`.
    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Var> {
        let adjacency = match &self.layout.graph {
            Some(graph) => Some(graph.adjacency.materialize(s)?),
            None => None,
        };
        let g = s.graph();
        let x_enc = g.constant(batch.x_enc.clone());
        let marks_enc = g.constant(batch.marks_enc.clone());
        let x_dec = g.constant(batch.x_dec_known.clone());
        let marks_dec = g.constant(batch.marks_dec.clone());
        let memory = self.encode(s, x_enc, marks_enc, adjacency)?;
        self.decode(s, x_dec, marks_dec, memory, adjacency)
    }

    /// Evaluation-mode prediction (dropout off).
    pub fn predict(&self, batch: &Batch) -> Result<Tensor> {
        let mut s = Session::new(&self.params);
        let out = self.forward(&mut s, batch)?;
        Ok(s.graph_ref().value(out).clone())
    }
}
