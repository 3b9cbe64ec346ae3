//! SFCK model checkpoints and their `.meta` text sidecar.
//!
//! ```text
//! "SFCK"  u32 version (1)  u32 param_count
//! param_count x { u32 name_len, name bytes, u32 rank, rank x u64 extent, n x f64 }
//! ```
//!
//! The sidecar is `key=value` lines in a fixed order and carries what is
//! needed to rebuild the model skeleton before loading the values.

use std::fs;
use std::path::{Path, PathBuf};

use sleepfuse_core::dsp::MelConfig;
use sleepfuse_core::experiment::ModelSpec;
use sleepfuse_core::fusion::{FusionMode, FusionModel, TrainingRegime, CONCAT_ORDER};
use sleepfuse_core::nn::{NnError, ParamStore, Tensor};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::exchange::{write_atomic, Reader};

pub const MAGIC: &[u8; 4] = b"SFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic {0:?}, expected \"SFCK\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("file truncated at byte {at}: {what}")]
    Truncated { at: usize, what: &'static str },
    #[error("{0} bytes after the last parameter")]
    TrailingBytes(usize),
    #[error("parameter {0}: name is not UTF-8")]
    Utf8(u32),
    #[error("parameter {name}: shape {shape:?} is too large")]
    Shape { name: String, shape: Vec<u64> },
    #[error("sidecar line {line}: {reason}")]
    Meta { line: usize, reason: String },
    #[error("sidecar lacks {0}")]
    MissingKey(&'static str),
    #[error("checkpoint does not fit the model described by its sidecar: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    let mut r = Reader::new(bytes);
    let short = |r: &Reader, what| CheckpointError::Truncated { at: r.pos(), what };
    let magic: [u8; 4] = r.array().ok_or_else(|| short(&r, "magic"))?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32().ok_or_else(|| short(&r, "version"))?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32().ok_or_else(|| short(&r, "parameter count"))?;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len = r.u32().ok_or_else(|| short(&r, "name length"))? as usize;
        let name = r.take(len).ok_or_else(|| short(&r, "name"))?;
        let name = std::str::from_utf8(name).map_err(|_| CheckpointError::Utf8(i))?;
        let rank = r.u32().ok_or_else(|| short(&r, "rank"))? as usize;
        let mut extents = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            extents.push(r.u64().ok_or_else(|| short(&r, "extent"))?);
        }
        let too_large = || CheckpointError::Shape {
            name: name.into(),
            shape: extents.clone(),
        };
        let n = extents
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(usize::try_from(e).ok()?))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(too_large)?;
        let raw = r.take(8 * n).ok_or_else(|| short(&r, "values"))?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let shape: Vec<usize> = extents.iter().map(|&e| e as usize).collect();
        store.add(name, Tensor::new(&shape, values)?)?;
    }
    if r.remaining() != 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()));
    }
    Ok(store)
}

/// Everything besides parameter values that is needed to use a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub method: String,
    pub mode: FusionMode,
    pub regime: TrainingRegime,
    pub eog_dim: usize,
    pub psm_dim: usize,
    pub concat_order: String,
    pub fold: usize,
    pub config_hash: String,
    pub model: ModelSpec,
    pub mel: MelConfig,
}

impl CheckpointMeta {
    pub fn for_model(model: &FusionModel, spec: &ModelSpec, mel: &MelConfig, fold: usize, config_hash: &str) -> Self {
        Self {
            method: spec.method().into(),
            mode: model.mode,
            regime: model.regime,
            eog_dim: model.eog_dim(),
            psm_dim: model.psm_dim(),
            concat_order: CONCAT_ORDER.into(),
            fold,
            config_hash: config_hash.into(),
            model: spec.clone(),
            mel: mel.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        // Compact JSON keeps each structured value on one line.
        let model = serde_json::to_string(&self.model).expect("model spec serializes");
        let mel = serde_json::to_string(&self.mel).expect("mel config serializes");
        format!(
            "format=SFCK\nversion={VERSION}\nmethod={}\nmode={}\nregime={}\neog_dim={}\npsm_dim={}\n\
             concat_order={}\nfold={}\nconfig_hash={}\nmodel={}\nmel={}\n",
            self.method,
            self.mode.name(),
            self.regime.name(),
            self.eog_dim,
            self.psm_dim,
            self.concat_order,
            self.fold,
            self.config_hash,
            model,
            mel,
        )
    }

    pub fn parse(text: &str) -> Result<Self, CheckpointError> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| CheckpointError::Meta {
                line: i + 1,
                reason: "expected key=value".into(),
            })?;
            kv.insert(k.trim(), (i + 1, v.trim()));
        }
        let get = |k: &'static str| kv.get(k).copied().ok_or(CheckpointError::MissingKey(k));
        let bad = |line: usize, reason: String| CheckpointError::Meta { line, reason };
        let num = |k: &'static str| -> Result<usize, CheckpointError> {
            let (line, v) = get(k)?;
            v.parse().map_err(|_| bad(line, format!("{k} is not a number")))
        };

        let (line, format) = get("format")?;
        if format != "SFCK" {
            return Err(bad(line, format!("format {format}")));
        }
        let (line, version) = get("version")?;
        if version != VERSION.to_string() {
            return Err(bad(line, format!("version {version}")));
        }
        let (line, mode) = get("mode")?;
        let mode = serde_json::from_value(serde_json::Value::String(mode.into()))
            .map_err(|_| bad(line, format!("unknown mode {mode}")))?;
        let (line, regime) = get("regime")?;
        let regime = serde_json::from_value(serde_json::Value::String(regime.into()))
            .map_err(|_| bad(line, format!("unknown regime {regime}")))?;
        let (line, order) = get("concat_order")?;
        if order != CONCAT_ORDER {
            return Err(bad(line, format!("concat order {order}, expected {CONCAT_ORDER}")));
        }
        let (line, model) = get("model")?;
        let model = serde_json::from_str(model).map_err(|e| bad(line, format!("model: {e}")))?;
        let (line, mel) = get("mel")?;
        let mel = serde_json::from_str(mel).map_err(|e| bad(line, format!("mel: {e}")))?;
        Ok(Self {
            method: get("method")?.1.into(),
            mode,
            regime,
            eog_dim: num("eog_dim")?,
            psm_dim: num("psm_dim")?,
            concat_order: order.into(),
            fold: num("fold")?,
            config_hash: get("config_hash")?.1.into(),
            model,
            mel,
        })
    }

    /// Rebuilds the model skeleton and loads `params` into it.
    pub fn restore(&self, params: &ParamStore) -> Result<FusionModel, CheckpointError> {
        let mut model = self
            .model
            .build(self.mode, self.regime, 0)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        if model.eog_dim() != self.eog_dim || model.psm_dim() != self.psm_dim {
            return Err(CheckpointError::Mismatch(format!(
                "sidecar dims {}+{}, model dims {}+{}",
                self.eog_dim,
                self.psm_dim,
                model.eog_dim(),
                model.psm_dim()
            )));
        }
        model.store.load_values(params)?;
        Ok(model)
    }
}

pub fn meta_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("meta")
}

/// Writes `path` and its `.meta` sidecar, each atomically.
pub fn save(path: &Path, model: &FusionModel, meta: &CheckpointMeta) -> Result<()> {
    write_atomic(path, &encode(&model.store))?;
    write_atomic(&meta_path(path), meta.to_text().as_bytes())
}

pub fn load(path: &Path) -> Result<(FusionModel, CheckpointMeta)> {
    let wrap = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Checkpoint { path: p, source }
    };
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(Error::io(&mp))?;
    let meta = CheckpointMeta::parse(&text).map_err(wrap(&mp))?;
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let params = decode(&bytes).map_err(wrap(path))?;
    let model = meta.restore(&params).map_err(wrap(path))?;
    Ok((model, meta))
}
