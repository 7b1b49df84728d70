//! Run configuration file.
//!
//! Every key is optional; missing keys take the defaults below. Command-line
//! flags are applied on top of the file. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use adpgcn_core::data::{Coupling, SynthSpec, DEFAULT_FRACTIONS};
use adpgcn_core::forecaster::{default_label_len, AttentionKind, ModelConfig};
use adpgcn_core::graph_conv::GcnConfig;
use adpgcn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub synth: SynthSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    /// Column moved to the last position; defaults to the file's last column.
    pub target: Option<String>,
    pub fractions: [f64; 3],
    pub stride: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { path: None, target: None, fractions: DEFAULT_FRACTIONS, stride: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub seq_len: usize,
    /// Defaults to 48 when `seq_len ≥ 96`, else `seq_len / 2`.
    pub label_len: Option<usize>,
    pub pred_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub enc_layers_main: usize,
    pub enc_layers_aux: usize,
    pub dec_layers: usize,
    pub dropout: f64,
    pub attention: String,
    pub use_gcn: bool,
    pub gcn_hidden: usize,
    pub gcn_depth: usize,
    pub gcn_embed_dim: usize,
    pub gcn_layers: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let mut s = ModelSection::from_config(&ModelConfig::new(1, 96, 24));
        s.label_len = None;
        s
    }
}

impl ModelSection {
    pub fn from_config(c: &ModelConfig) -> Self {
        ModelSection {
            seq_len: c.seq_len,
            label_len: Some(c.label_len),
            pred_len: c.pred_len,
            d_model: c.d_model,
            n_heads: c.n_heads,
            d_ff: c.d_ff,
            enc_layers_main: c.enc_layers_main,
            enc_layers_aux: c.enc_layers_aux,
            dec_layers: c.dec_layers,
            dropout: c.dropout,
            attention: match c.attention {
                AttentionKind::Full => "full".into(),
            },
            use_gcn: c.use_gcn,
            gcn_hidden: c.gcn.hidden,
            gcn_depth: c.gcn.depth,
            gcn_embed_dim: c.gcn.embed_dim,
            gcn_layers: c.gcn.layers,
        }
    }

    pub fn to_config(&self, n_dims: usize) -> Result<ModelConfig> {
        let attention = match self.attention.as_str() {
            "full" => AttentionKind::Full,
            other => return Err(AppError::config("model.attention", format!("unknown kind `{other}`, expected `full`"))),
        };
        let config = ModelConfig {
            n_dims,
            seq_len: self.seq_len,
            label_len: self.label_len.unwrap_or_else(|| default_label_len(self.seq_len)),
            pred_len: self.pred_len,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            enc_layers_main: self.enc_layers_main,
            enc_layers_aux: self.enc_layers_aux,
            dec_layers: self.dec_layers,
            dropout: self.dropout,
            attention,
            gcn: GcnConfig { hidden: self.gcn_hidden, depth: self.gcn_depth, embed_dim: self.gcn_embed_dim, layers: self.gcn_layers },
            use_gcn: self.use_gcn,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr0: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr0: t.lr0,
            epochs: t.epochs,
            patience: t.patience,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            seed: t.seed,
            grad_clip: t.grad_clip,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lr0: self.lr0,
            epochs: self.epochs,
            patience: self.patience,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            grad_clip: self.grad_clip,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Score only the last column instead of every dimension.
    pub target_only: bool,
    /// Report metrics in original units instead of the normalized scale.
    pub denormalize: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { horizons: vec![24], seeds: vec![1, 2, 3], target_only: false, denormalize: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub n_dims: usize,
    pub len: usize,
    pub noise_std: f64,
    pub ar_coef: f64,
    pub drive_amp: f64,
    pub drive_periods: [f64; 2],
    pub seed: u64,
    pub couplings: Vec<CouplingEntry>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub src: usize,
    pub dst: usize,
    pub lag: usize,
    pub weight: f64,
}

impl From<CouplingEntry> for Coupling {
    fn from(c: CouplingEntry) -> Self {
        Coupling { src: c.src, dst: c.dst, lag: c.lag, weight: c.weight }
    }
}

impl From<Coupling> for CouplingEntry {
    fn from(c: Coupling) -> Self {
        CouplingEntry { src: c.src, dst: c.dst, lag: c.lag, weight: c.weight }
    }
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SynthSpec::new(6, 5000, Vec::new(), 0.3, 7);
        SynthSection {
            n_dims: d.n_dims,
            len: d.len,
            noise_std: d.noise_std,
            ar_coef: 0.8,
            drive_amp: 1.0,
            drive_periods: [d.drive_periods.0, d.drive_periods.1],
            seed: d.seed,
            couplings: vec![
                CouplingEntry { src: 0, dst: 1, lag: 12, weight: 0.6 },
                CouplingEntry { src: 2, dst: 3, lag: 18, weight: 0.6 },
                CouplingEntry { src: 4, dst: 5, lag: 24, weight: 0.6 },
            ],
        }
    }
}

impl SynthSection {
    pub fn to_spec(&self) -> SynthSpec {
        let mut spec = SynthSpec::new(self.n_dims, self.len, self.couplings.iter().map(|&c| c.into()).collect(), self.noise_std, self.seed);
        spec.ar_coef = self.ar_coef;
        spec.drive_amp = self.drive_amp;
        spec.drive_periods = (self.drive_periods[0], self.drive_periods[1]);
        spec
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("runs") }
    }
}

impl RunSpec {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| AppError::config(origin.display().to_string(), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| AppError::config("config", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunSpec::from_toml("", Path::new("x")).unwrap(), RunSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunSpec::from_toml("[model]\nd_modle = 3\n", Path::new("x")).unwrap_err();
        assert!(matches!(err, AppError::Config { .. }));
        assert!(err.to_string().contains("d_modle"));
    }

    #[test]
    fn resolved_dump_reloads() {
        let mut spec = RunSpec::default();
        spec.model.label_len = Some(12);
        spec.train.grad_clip = Some(1.5);
        spec.data.target = Some("OT".into());
        let text = spec.to_toml().unwrap();
        assert_eq!(RunSpec::from_toml(&text, Path::new("x")).unwrap(), spec);
    }

    #[test]
    fn model_section_round_trips_config() {
        let c = ModelConfig::new(7, 48, 24);
        assert_eq!(ModelSection::from_config(&c).to_config(7).unwrap(), c);
    }
}
