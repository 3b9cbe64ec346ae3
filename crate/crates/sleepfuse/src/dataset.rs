//! Loading a manifest into recordings or model-ready samples.
//!
//! Patients are loaded, segmented and featurized one at a time per worker,
//! so raw streams never pile up in memory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sleepfuse_core::dsp::MelConfig;
use sleepfuse_core::encoders::{EncoderConfig, ExternalEmbeddingStore, Modality};
use sleepfuse_core::experiment::{Featurizer, Sample};
use sleepfuse_core::fusion::FusionMode;
use sleepfuse_core::ingest::{segment_epochs, DatasetManifest, EpochRecord, ManifestEntry, PatientRecording};

use crate::error::{Error, Result};
use crate::formats::{read_eog_wav, read_labels, read_manifest, read_psm_header, read_psm_stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientLoad {
    pub patient_id: String,
    pub epochs: usize,
    pub dropped: usize,
}

/// Per-patient epoch and drop counts, in manifest order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub patients: Vec<PatientLoad>,
}

impl LoadReport {
    pub fn epochs(&self) -> usize {
        self.patients.iter().map(|p| p.epochs).sum()
    }

    pub fn dropped(&self) -> usize {
        self.patients.iter().map(|p| p.dropped).sum()
    }
}

/// Manifest plus the directory its relative paths hang off.
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        Ok(Self {
            manifest: read_manifest(manifest_path)?,
            root: manifest_path.parent().unwrap_or(Path::new("")).to_path_buf(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_patient(&self, entry: &ManifestEntry) -> Result<PatientRecording> {
        self.load_patient_inner(entry).map_err(|e| e.for_patient(&entry.patient_id))
    }

    fn load_patient_inner(&self, entry: &ManifestEntry) -> Result<PatientRecording> {
        let wav = self.path(&entry.eog_wav);
        let (eog_left, eog_right, rate) = read_eog_wav(&wav)?;
        if rate != entry.eog_rate_hz {
            return Err(Error::parse(
                &wav,
                0,
                format!("sample rate {rate} Hz, manifest says {}", entry.eog_rate_hz),
            ));
        }
        let hdr_path = self.path(&entry.psm_header);
        let header = read_psm_header(&hdr_path)?;
        let psm_path = self.path(&entry.psm_stream);
        let psm_frames = read_psm_stream(&psm_path)?;
        let frames = psm_frames.len() / sleepfuse_core::ingest::PSM_FRAME_LEN;
        if frames != header.frames {
            return Err(Error::parse(
                &psm_path,
                0,
                format!("{frames} frames, header says {}", header.frames),
            ));
        }
        let rec = PatientRecording {
            patient_id: entry.patient_id.clone(),
            eog_left,
            eog_right,
            eog_rate_hz: rate,
            psm_frames,
            psm_rate_hz: header.rate_hz,
            labels: read_labels(&self.path(&entry.labels))?,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn load_all(&self) -> Result<Vec<PatientRecording>> {
        first_error(self.manifest.patients.par_iter().map(|e| self.load_patient(e)).collect())
    }

    /// Segments every patient and hands each kept epoch to `f`.
    pub fn for_each_epoch<T, I, F>(&self, init: I, f: F) -> Result<(Vec<T>, LoadReport)>
    where
        T: Send,
        I: Fn() -> Result<Featurizer> + Sync + Send,
        F: Fn(&mut Featurizer, &EpochRecord) -> Result<T> + Sync + Send,
    {
        let per_patient: Vec<Result<(Vec<T>, PatientLoad)>> = self
            .manifest
            .patients
            .par_iter()
            .map_init(&init, |fz, entry| {
                let fz = fz.as_mut().map_err(|e| Error::Config(e.to_string()))?;
                let rec = self.load_patient(entry)?;
                let seg = segment_epochs(&rec)?;
                drop(rec);
                let out = seg
                    .epochs
                    .iter()
                    .map(|ep| f(fz, ep))
                    .collect::<Result<Vec<T>>>()
                    .map_err(|e| e.for_patient(&entry.patient_id))?;
                let load = PatientLoad {
                    patient_id: entry.patient_id.clone(),
                    epochs: seg.epochs.len(),
                    dropped: seg.dropped,
                };
                Ok((out, load))
            })
            .collect();
        let mut items = Vec::new();
        let mut report = LoadReport::default();
        for r in first_error(per_patient)? {
            items.extend(r.0);
            report.patients.push(r.1);
        }
        Ok((items, report))
    }

    /// Token samples for the toy encoders.
    pub fn token_samples(&self, mel: &MelConfig, encoder: &EncoderConfig) -> Result<(Vec<Sample>, LoadReport)> {
        Featurizer::new(mel.clone(), encoder.clone())?;
        self.for_each_epoch(
            || Ok(Featurizer::new(mel.clone(), encoder.clone())?),
            |fz, ep| Ok(fz.featurize(ep)?),
        )
    }

    /// Samples carrying external embeddings. Labels come from the label
    /// files; a scored epoch without an embedding for every active modality
    /// counts as dropped.
    pub fn embedding_samples(
        &self,
        mode: FusionMode,
        eog: Option<&ExternalEmbeddingStore>,
        psm: Option<&ExternalEmbeddingStore>,
    ) -> Result<(Vec<Sample>, LoadReport)> {
        check_store(eog, Modality::Audio, mode.uses_eog(), "EOG")?;
        check_store(psm, Modality::Video, mode.uses_psm(), "PSM")?;
        let lookup = |s: Option<&ExternalEmbeddingStore>, active: bool, id: &str, i: u32| match (s, active) {
            (Some(s), true) => s.get(id, i).map(|v| Some(v.values.clone())),
            _ => Some(None),
        };
        let mut samples = Vec::new();
        let mut report = LoadReport::default();
        for entry in &self.manifest.patients {
            let labels = read_labels(&self.path(&entry.labels)).map_err(|e| e.for_patient(&entry.patient_id))?;
            let mut load = PatientLoad {
                patient_id: entry.patient_id.clone(),
                epochs: 0,
                dropped: 0,
            };
            for (i, label) in labels.iter().enumerate() {
                let i = i as u32;
                let id = entry.patient_id.as_str();
                match (label, lookup(eog, mode.uses_eog(), id, i), lookup(psm, mode.uses_psm(), id, i)) {
                    (Some(label), Some(eog_embedding), Some(psm_embedding)) => {
                        load.epochs += 1;
                        samples.push(Sample {
                            patient_id: id.into(),
                            epoch_index: i,
                            label: *label,
                            audio: None,
                            video: None,
                            eog_embedding,
                            psm_embedding,
                        });
                    }
                    _ => load.dropped += 1,
                }
            }
            report.patients.push(load);
        }
        Ok((samples, report))
    }
}

fn check_store(s: Option<&ExternalEmbeddingStore>, want: Modality, active: bool, what: &str) -> Result<()> {
    match s {
        Some(s) if s.modality() != want => Err(Error::Config(format!(
            "{what} embeddings file holds {:?} records",
            s.modality()
        ))),
        None if active => Err(Error::Config(format!("mode needs {what} embeddings"))),
        _ => Ok(()),
    }
}

/// The first error in input order, so reports do not depend on scheduling.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_cohort, CohortSpec};
    use std::fs;

    fn tiny_cohort(dir: &Path) -> PathBuf {
        let spec = CohortSpec {
            n_patients: 3,
            n_epochs: 4,
            seed: 11,
            ..CohortSpec::default()
        };
        generate_cohort(dir, &spec).unwrap();
        dir.join("manifest.json")
    }

    #[test]
    fn generated_cohort_loads_without_drops() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::open(&tiny_cohort(dir.path())).unwrap();
        let recs = ds.load_all().unwrap();
        assert_eq!(recs.len(), 3);
        let enc = EncoderConfig {
            embedding_dim: 8,
            ..EncoderConfig::default()
        };
        let (samples, report) = ds.token_samples(&MelConfig::default(), &enc).unwrap();
        assert_eq!(samples.len(), 12);
        assert_eq!(report.dropped(), 0);
        let ids: Vec<_> = report.patients.iter().map(|p| p.patient_id.as_str()).collect();
        assert_eq!(ids, ["P000", "P001", "P002"]);
        assert_eq!(samples[4].key(), ("P001", 0));
    }

    #[test]
    fn unscored_windows_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::open(&tiny_cohort(dir.path())).unwrap();
        let labels = dir.path().join(&ds.manifest.patients[1].labels);
        let text = fs::read_to_string(&labels).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "?";
        fs::write(&labels, lines.join("\n")).unwrap();
        let (samples, report) = ds.token_samples(&MelConfig::default(), &EncoderConfig::default()).unwrap();
        assert_eq!(samples.len(), 11);
        assert_eq!(report.patients[1].dropped, 1);
    }

    #[test]
    fn missing_file_names_the_patient() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::open(&tiny_cohort(dir.path())).unwrap();
        fs::remove_file(dir.path().join(&ds.manifest.patients[2].psm_stream)).unwrap();
        let err = ds.load_all().unwrap_err();
        assert!(err.to_string().starts_with("patient P002:"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn embeddings_join_on_patient_and_epoch() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::open(&tiny_cohort(dir.path())).unwrap();
        let mut eog = ExternalEmbeddingStore::new(Modality::Audio, 2).unwrap();
        let mut psm = ExternalEmbeddingStore::new(Modality::Video, 3).unwrap();
        for p in ["P000", "P001", "P002"] {
            for i in 0..4 {
                eog.insert(p, i, vec![i as f64; 2]).unwrap();
                if !(p == "P002" && i == 3) {
                    psm.insert(p, i, vec![1.0; 3]).unwrap();
                }
            }
        }
        let (s, r) = ds.embedding_samples(FusionMode::Fused, Some(&eog), Some(&psm)).unwrap();
        assert_eq!((s.len(), r.dropped()), (11, 1));
        assert_eq!(s[1].eog_embedding.as_deref(), Some(&[1.0, 1.0][..]));
        let (s, _) = ds.embedding_samples(FusionMode::EogOnly, Some(&eog), None).unwrap();
        assert_eq!(s.len(), 12);
        assert!(s[0].psm_embedding.is_none());
        assert!(ds.embedding_samples(FusionMode::Fused, Some(&psm), Some(&psm)).is_err());
    }
}
