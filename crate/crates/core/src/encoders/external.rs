use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{EmbeddingSource, EmbeddingVector, EncoderError};

/// Modality code carried in exchange files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    /// EOG through the audio route.
    Audio = 0,
    /// Pressure clips through the video route.
    Video = 1,
}

impl Modality {
    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Self::Audio),
            1 => Some(Self::Video),
            _ => None,
        }
    }
}

/// Precomputed embeddings of one modality keyed by `(patient_id,
/// epoch_index)`. Records keep their insertion order so a store read from
/// disk writes back unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEmbeddingStore {
    modality: Modality,
    dim: usize,
    order: Vec<(String, u32)>,
    records: BTreeMap<(String, u32), EmbeddingVector>,
}

impl ExternalEmbeddingStore {
    pub fn new(modality: Modality, dim: usize) -> Result<Self, EncoderError> {
        if dim == 0 {
            return Err(EncoderError::Config("embedding dim must be positive"));
        }
        Ok(Self {
            modality,
            dim,
            order: Vec::new(),
            records: BTreeMap::new(),
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(
        &mut self,
        patient_id: impl Into<String>,
        epoch_index: u32,
        values: Vec<f64>,
    ) -> Result<(), EncoderError> {
        if values.len() != self.dim {
            return Err(EncoderError::DimMismatch {
                expected: self.dim,
                found: values.len(),
            });
        }
        let key = (patient_id.into(), epoch_index);
        if self.records.contains_key(&key) {
            return Err(EncoderError::DuplicateKey {
                patient_id: key.0,
                epoch_index,
            });
        }
        let v = EmbeddingVector::new(values, EmbeddingSource::External)?;
        self.order.push(key.clone());
        self.records.insert(key, v);
        Ok(())
    }

    pub fn get(&self, patient_id: &str, epoch_index: u32) -> Option<&EmbeddingVector> {
        // BTreeMap lookup on a borrowed tuple needs an owned key.
        self.records.get(&(String::from(patient_id), epoch_index))
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, u32, &EmbeddingVector)> + '_ {
        self.order
            .iter()
            .map(move |k| (k.0.as_str(), k.1, &self.records[k]))
    }
}
