//! Sensor normalization and 30 s epoch segmentation.
//!
//! A [`PatientRecording`] holds raw acquisition values exactly as they come
//! off disk: EOG as signed ADC counts in `[-3000, 3000]`, the pressure mat as
//! an `18 x 8` grid of counts in `[0, 2046]` at 10 Hz. [`segment_epochs`]
//! cuts a recording into aligned [`EpochRecord`]s on a shared grid starting at
//! the first sample and maps every value into `[0, 1]`.

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::stage::SleepStage;

pub const PSM_ROWS: usize = 18;
pub const PSM_COLS: usize = 8;
pub const PSM_FRAME_LEN: usize = PSM_ROWS * PSM_COLS;
pub const PSM_RATE_HZ: u32 = 10;
pub const PSM_MAX_COUNT: f32 = 2046.0;
pub const EOG_MAX_ABS: i16 = 3000;
pub const EOG_RATES_HZ: [u32; 2] = [250, 512];
pub const EPOCH_SECONDS: usize = 30;
pub const PSM_FRAMES_PER_EPOCH: usize = EPOCH_SECONDS * PSM_RATE_HZ as usize;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IngestError {
    #[error("PSM frame {frame} has {len} values, expected {PSM_FRAME_LEN} (18x8)")]
    PsmShape { frame: usize, len: usize },
    #[error("PSM frame {frame} holds {value} outside [0, 2046]")]
    PsmRange { frame: usize, value: f32 },
    #[error("EOG sample {index} holds {value} outside [-3000, 3000]")]
    EogRange { index: usize, value: i16 },
    #[error("unsupported EOG rate {0} Hz (expected 250 or 512)")]
    EogRate(u32),
    #[error("unsupported PSM rate {0} Hz (expected 10)")]
    PsmRate(u32),
    #[error("EOG channels differ in length: left {left}, right {right}")]
    ChannelLength { left: usize, right: usize },
    #[error("PSM stream length {0} is not a whole number of 18x8 frames")]
    PsmStreamLength(usize),
    #[error(
        "streams disagree by more than one epoch: psm {psm_epochs}, eog {eog_epochs}, labels {label_epochs}"
    )]
    Alignment {
        psm_epochs: usize,
        eog_epochs: usize,
        label_epochs: usize,
    },
    #[error("patient {patient_id}: {source}")]
    Patient {
        patient_id: String,
        #[source]
        source: Box<IngestError>,
    },
    #[error("manifest schema version {found}, expected {MANIFEST_SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },
    #[error("duplicate patient id {0} in manifest")]
    DuplicatePatient(String),
}

impl IngestError {
    fn for_patient(self, patient_id: &str) -> Self {
        IngestError::Patient {
            patient_id: patient_id.into(),
            source: Box::new(self),
        }
    }
}

/// One night of raw sensor data for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecording {
    pub patient_id: String,
    pub eog_left: Vec<i16>,
    pub eog_right: Vec<i16>,
    pub eog_rate_hz: u32,
    /// Frame-major, row-major 18x8 raw counts. A non-finite value marks a
    /// sensor gap; epochs touching a gap are dropped during segmentation.
    pub psm_frames: Vec<f32>,
    pub psm_rate_hz: u32,
    /// One entry per 30 s window; `None` marks an unscored window.
    pub labels: Vec<Option<SleepStage>>,
}

impl PatientRecording {
    pub fn psm_frame_count(&self) -> usize {
        self.psm_frames.len() / PSM_FRAME_LEN
    }

    pub fn eog_samples_per_epoch(&self) -> usize {
        EPOCH_SECONDS * self.eog_rate_hz as usize
    }

    pub fn psm_frame(&self, index: usize) -> &[f32] {
        &self.psm_frames[index * PSM_FRAME_LEN..(index + 1) * PSM_FRAME_LEN]
    }

    /// Checks the structural invariants that do not depend on sample values.
    pub fn validate(&self) -> Result<(), IngestError> {
        self.validate_inner()
            .map_err(|e| e.for_patient(&self.patient_id))
    }

    fn validate_inner(&self) -> Result<(), IngestError> {
        if !EOG_RATES_HZ.contains(&self.eog_rate_hz) {
            return Err(IngestError::EogRate(self.eog_rate_hz));
        }
        if self.psm_rate_hz != PSM_RATE_HZ {
            return Err(IngestError::PsmRate(self.psm_rate_hz));
        }
        if self.eog_left.len() != self.eog_right.len() {
            return Err(IngestError::ChannelLength {
                left: self.eog_left.len(),
                right: self.eog_right.len(),
            });
        }
        if self.psm_frames.len() % PSM_FRAME_LEN != 0 {
            return Err(IngestError::PsmStreamLength(self.psm_frames.len()));
        }
        Ok(())
    }
}

/// One aligned 30 s unit: a 300-frame pressure clip, two EOG channels and
/// the scored stage. All payload values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub patient_id: String,
    pub epoch_index: u32,
    /// 300 frames of 144 values, frame-major.
    pub psm_clip: Vec<f32>,
    /// Left and right channel, `30 * native_eog_rate_hz` samples each.
    pub eog: [Vec<f32>; 2],
    pub native_eog_rate_hz: u32,
    pub label: SleepStage,
}

/// Result of segmenting one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub epochs: Vec<EpochRecord>,
    /// Windows skipped because the label was missing or the mat had a gap.
    pub dropped: usize,
}

pub fn normalize_psm_frame(frame: usize, raw: &[f32]) -> Result<[f32; PSM_FRAME_LEN], IngestError> {
    if raw.len() != PSM_FRAME_LEN {
        return Err(IngestError::PsmShape {
            frame,
            len: raw.len(),
        });
    }
    let mut out = [0.0f32; PSM_FRAME_LEN];
    for (o, &v) in out.iter_mut().zip(raw) {
        // NaN fails this check as well.
        if !(0.0..=PSM_MAX_COUNT).contains(&v) {
            return Err(IngestError::PsmRange { frame, value: v });
        }
        *o = (f64::from(v) / f64::from(PSM_MAX_COUNT)) as f32;
    }
    Ok(out)
}

pub fn normalize_eog_samples(raw: &[i16]) -> Result<Vec<f32>, IngestError> {
    raw.iter()
        .enumerate()
        .map(|(index, &v)| {
            if !(-EOG_MAX_ABS..=EOG_MAX_ABS).contains(&v) {
                return Err(IngestError::EogRange { index, value: v });
            }
            Ok(((f64::from(v) + 3000.0) / 6000.0) as f32)
        })
        .collect()
}

pub fn denormalize_psm(x: f32) -> f64 {
    f64::from(x) * f64::from(PSM_MAX_COUNT)
}

pub fn denormalize_eog(x: f32) -> f64 {
    f64::from(x) * 6000.0 - 3000.0
}

/// Number of whole epochs each stream supports, as `(psm, eog, labels)`.
pub fn stream_epoch_counts(rec: &PatientRecording) -> (usize, usize, usize) {
    (
        rec.psm_frame_count() / PSM_FRAMES_PER_EPOCH,
        rec.eog_left.len() / rec.eog_samples_per_epoch().max(1),
        rec.labels.len(),
    )
}

/// Cuts a recording into non-overlapping 30 s epochs.
///
/// The epoch count is the minimum over the three streams; streams that
/// disagree by more than one epoch are rejected. The trailing partial window
/// is discarded.
pub fn segment_epochs(rec: &PatientRecording) -> Result<Segmentation, IngestError> {
    rec.validate()?;
    segment_inner(rec).map_err(|e| e.for_patient(&rec.patient_id))
}

fn segment_inner(rec: &PatientRecording) -> Result<Segmentation, IngestError> {
    let (psm_epochs, eog_epochs, label_epochs) = stream_epoch_counts(rec);
    let lo = psm_epochs.min(eog_epochs).min(label_epochs);
    let hi = psm_epochs.max(eog_epochs).max(label_epochs);
    if hi - lo > 1 {
        return Err(IngestError::Alignment {
            psm_epochs,
            eog_epochs,
            label_epochs,
        });
    }

    let spe = rec.eog_samples_per_epoch();
    let mut epochs = Vec::with_capacity(lo);
    let mut dropped = 0;
    for i in 0..lo {
        let Some(label) = rec.labels[i] else {
            dropped += 1;
            continue;
        };
        let frames = i * PSM_FRAMES_PER_EPOCH..(i + 1) * PSM_FRAMES_PER_EPOCH;
        let raw_clip = &rec.psm_frames[frames.start * PSM_FRAME_LEN..frames.end * PSM_FRAME_LEN];
        if raw_clip.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        let mut psm_clip = Vec::with_capacity(raw_clip.len());
        for f in frames {
            psm_clip.extend_from_slice(&normalize_psm_frame(f, rec.psm_frame(f))?);
        }
        let offset = i * spe;
        let channel = |raw: &[i16]| {
            normalize_eog_samples(&raw[offset..offset + spe]).map_err(|e| match e {
                IngestError::EogRange { index, value } => IngestError::EogRange {
                    index: index + offset,
                    value,
                },
                other => other,
            })
        };
        epochs.push(EpochRecord {
            patient_id: rec.patient_id.clone(),
            epoch_index: i as u32,
            psm_clip,
            eog: [channel(&rec.eog_left)?, channel(&rec.eog_right)?],
            native_eog_rate_hz: rec.eog_rate_hz,
            label,
        });
    }
    Ok(Segmentation { epochs, dropped })
}

/// File-level description of a dataset. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub patients: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    /// Two-channel 16-bit PCM wave, left eye first.
    pub eog_wav: String,
    pub eog_rate_hz: u32,
    /// Little-endian f32 stream, frame-major 18x8.
    pub psm_stream: String,
    /// Text sidecar with rate and frame count.
    pub psm_header: String,
    /// One stage token per line.
    pub labels: String,
}

impl DatasetManifest {
    pub fn new(patients: Vec<ManifestEntry>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            patients,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(IngestError::SchemaVersion {
                found: self.schema_version,
            });
        }
        let mut seen = BTreeSet::new();
        for p in &self.patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(IngestError::DuplicatePatient(p.patient_id.clone()));
            }
            if !EOG_RATES_HZ.contains(&p.eog_rate_hz) {
                return Err(IngestError::EogRate(p.eog_rate_hz).for_patient(&p.patient_id));
            }
        }
        Ok(())
    }
}
