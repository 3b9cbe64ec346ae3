//! Run configuration: defaults, then a TOML file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sleepfuse_core::dsp::MelConfig;
use sleepfuse_core::encoders::EncoderConfig;
use sleepfuse_core::experiment::{Hyperparameters, DEFAULT_FOLDS};
use sleepfuse_core::fusion::TrainingRegime;

use crate::error::{Error, Result};

/// Everything `train` needs. Field names double as the TOML keys; the
/// nested tables are `[train]`, `[mel]` and `[encoder]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset manifest.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub eog_embeddings: Option<PathBuf>,
    pub psm_embeddings: Option<PathBuf>,
    pub folds: usize,
    pub fold_seed: u64,
    pub train: Hyperparameters,
    pub mel: MelConfig,
    pub encoder: EncoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            eog_embeddings: None,
            psm_embeddings: None,
            folds: DEFAULT_FOLDS,
            fold_seed: 0,
            train: Hyperparameters::default(),
            mel: MelConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a TOML file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|source| Error::Toml {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.out, &mut cfg.eog_embeddings, &mut cfg.psm_embeddings]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn uses_external_embeddings(&self) -> bool {
        self.eog_embeddings.is_some() || self.psm_embeddings.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.data.is_none() {
            return bad("no dataset manifest given (--data)");
        }
        if self.out.is_none() {
            return bad("no output directory given (--out)");
        }
        if self.folds < 2 {
            return bad("need at least 2 folds");
        }
        if self.uses_external_embeddings() {
            if self.train.regime == TrainingRegime::FineTune {
                return bad("fine_tune cannot be combined with external embeddings; use linear_probe");
            }
            if self.train.mode.uses_eog() && self.eog_embeddings.is_none() {
                return bad("mode needs --eog-embeddings");
            }
            if self.train.mode.uses_psm() && self.psm_embeddings.is_none() {
                return bad("mode needs --psm-embeddings");
            }
        }
        self.train.validate()?;
        self.mel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the settings that influence results. Paths and output
    /// locations are left out so a moved dataset keeps its fingerprint.
    pub fn fingerprint(&self, method: &str) -> String {
        let doc = serde_json::json!({
            "method": method,
            "folds": self.folds,
            "fold_seed": self.fold_seed,
            "train": self.train,
            "mel": self.mel,
            "encoder": if self.uses_external_embeddings() { None } else { Some(&self.encoder) },
        });
        // serde_json maps are sorted by key, so this text is canonical.
        let digest = Sha256::digest(doc.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
