//! Checkpoint container.
//!
//! Byte layout, in order:
//!
//! 1. Magic line `ADPGCN-CKPT\n` (12 bytes).
//! 2. Header: UTF-8 TOML text with `format_version`, `param_count`,
//!    `columns`, and the `[model]`, `[norm]`, `[rng]` tables plus one
//!    `[[history]]` entry per epoch. Floats are written as decimal strings
//!    in shortest round-trip form so they reload bit for bit.
//! 3. Separator line `--- params ---\n`.
//! 4. `param_count` records, each:
//!    - `u32` name length `L`, then `L` bytes of UTF-8 name
//!    - `u8` dtype tag, `1` = 64-bit float
//!    - `u32` rank `R`, then `R` × `u64` extents
//!    - `Π extents` × 8 bytes of little-endian IEEE-754 binary64, row-major
//! 5. End of file. Trailing bytes are rejected.
//!
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use adpgcn_core::data::NormStats;
use adpgcn_core::forecaster::Forecaster;
use adpgcn_core::params::ParamStore;
use adpgcn_core::rng::RngState;
use adpgcn_core::train::{Checkpoint, EpochRecord, TrainRng};
use adpgcn_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::ModelSection;
use crate::error::{AppError, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"ADPGCN-CKPT\n";
const SEPARATOR: &[u8] = b"--- params ---\n";
const DTYPE_F64: u8 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    param_count: usize,
    columns: Vec<String>,
    model: ModelSection,
    norm: NormDoc,
    rng: RngDoc,
    #[serde(default)]
    history: Vec<EpochDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormDoc {
    mean: Vec<String>,
    std: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngDoc {
    shuffle: StreamDoc,
    dropout: StreamDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StreamDoc {
    seed: String,
    stream: String,
    word_pos: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochDoc {
    epoch: usize,
    lr: String,
    train_loss: String,
    val_loss: String,
}

fn f(v: f64) -> String {
    v.to_string()
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| AppError::CorruptCheckpoint(format!("{what}: cannot parse {s:?}")))
}

impl StreamDoc {
    fn from_state(s: &RngState) -> Self {
        StreamDoc { seed: s.seed.to_string(), stream: s.stream.to_string(), word_pos: s.word_pos.to_string() }
    }

    fn to_state(&self) -> Result<RngState> {
        Ok(RngState {
            seed: parse("rng seed", &self.seed)?,
            stream: parse("rng stream", &self.stream)?,
            word_pos: parse("rng word_pos", &self.word_pos)?,
        })
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        param_count: ckpt.params.len(),
        columns: ckpt.columns.clone(),
        model: ModelSection::from_config(&ckpt.config),
        norm: NormDoc { mean: ckpt.norm.mean.iter().copied().map(f).collect(), std: ckpt.norm.std.iter().copied().map(f).collect() },
        rng: RngDoc { shuffle: StreamDoc::from_state(&ckpt.rng.shuffle), dropout: StreamDoc::from_state(&ckpt.rng.dropout) },
        history: ckpt
            .history
            .iter()
            .map(|h| EpochDoc { epoch: h.epoch, lr: f(h.lr), train_loss: f(h.train_loss), val_loss: f(h.val_loss) })
            .collect(),
    };
    let text = toml::to_string(&header).map_err(|e| AppError::CorruptCheckpoint(format!("header: {e}")))?;
    let mut out = Vec::with_capacity(MAGIC.len() + text.len() + 8 * ckpt.params.numel() + 64 * ckpt.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(text.as_bytes());
    if !text.ends_with('\n') {
        out.push(b'\n');
    }
    out.extend_from_slice(SEPARATOR);
    for (name, t) in ckpt.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AppError::CorruptCheckpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses bytes produced by [`encode`].
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| AppError::CorruptCheckpoint(m.to_owned());
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| corrupt("missing magic line"))?;
    let sep = rest
        .windows(SEPARATOR.len())
        .position(|w| w == SEPARATOR && true)
        .ok_or_else(|| corrupt("missing header separator"))?;
    let text = std::str::from_utf8(&rest[..sep]).map_err(|_| corrupt("header is not UTF-8"))?;
    let table: toml::Table = text.parse().map_err(|e| AppError::CorruptCheckpoint(format!("header: {e}")))?;
    let version = table
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| corrupt("header lacks format_version"))?;
    if version != i64::from(FORMAT_VERSION) {
        return Err(AppError::FormatVersionMismatch { found: version.clamp(0, u32::MAX as i64) as u32, expected: FORMAT_VERSION });
    }
    let header: Header = toml::from_str(text).map_err(|e| AppError::CorruptCheckpoint(format!("header: {e}")))?;
    let config = header.model.to_config(header.columns.len()).map_err(|e| AppError::CorruptCheckpoint(e.to_string()))?;

    let mut cur = Cursor { bytes: &rest[sep + SEPARATOR.len()..], pos: 0 };
    let mut params = ParamStore::new();
    for i in 0..header.param_count {
        let len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?).map_err(|_| corrupt("parameter name is not UTF-8"))?.to_owned();
        let dtype = cur.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(AppError::CorruptCheckpoint(format!("record {i} (`{name}`) has unknown dtype {dtype}")));
        }
        let rank = cur.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(AppError::CorruptCheckpoint(format!("record {i} (`{name}`) has rank {rank}")));
        }
        let shape = (0..rank).map(|_| cur.u64("extent").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("extent overflow"))?;
        let raw = cur.take(numel.checked_mul(8).ok_or_else(|| corrupt("extent overflow"))?, "values")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| AppError::CorruptCheckpoint(format!("`{name}`: {e}")))?;
        if params.find(&name).is_some() {
            return Err(AppError::CorruptCheckpoint(format!("duplicate parameter `{name}`")));
        }
        params.add(name, tensor);
    }
    if cur.pos != cur.bytes.len() {
        return Err(AppError::CorruptCheckpoint(format!("{} trailing bytes", cur.bytes.len() - cur.pos)));
    }
    let model = Forecaster::from_params(config.clone(), params).map_err(|e| AppError::CorruptCheckpoint(e.to_string()))?;

    let floats = |what: &str, v: &[String]| v.iter().map(|s| parse::<f64>(what, s)).collect::<Result<Vec<_>>>();
    let norm = NormStats { mean: floats("norm mean", &header.norm.mean)?, std: floats("norm std", &header.norm.std)? };
    if norm.mean.len() != config.n_dims || norm.std.len() != config.n_dims {
        return Err(corrupt("normalization length differs from the column count"));
    }
    let history = header
        .history
        .iter()
        .map(|h| {
            Ok(EpochRecord {
                epoch: h.epoch,
                lr: parse("lr", &h.lr)?,
                train_loss: parse("train_loss", &h.train_loss)?,
                val_loss: parse("val_loss", &h.val_loss)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        config,
        params: model.into_params(),
        norm,
        history,
        rng: TrainRng { shuffle: header.rng.shuffle.to_state()?, dropout: header.rng.dropout.to_state()? },
        columns: header.columns,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    fs::write(path, encode(ckpt)?).map_err(|e| AppError::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes)
}
