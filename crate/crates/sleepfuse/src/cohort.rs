//! Writing a synthetic cohort to disk in the ingest formats.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use sleepfuse_core::ingest::{DatasetManifest, ManifestEntry, PSM_FRAME_LEN};
use sleepfuse_core::synth::{cohort_rates, generate_patient, patient_id, patient_seed, SynthProfile, DEFAULT_RATE_MIX};

use crate::error::{Error, Result};
use crate::formats::{write_eog_wav, write_labels, write_manifest, write_psm_header, write_psm_stream, PsmHeader};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub n_epochs: usize,
    pub seed: u64,
    pub profile: SynthProfile,
    /// 250 Hz to 512 Hz patients.
    pub rate_mix: (u32, u32),
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 10,
            n_epochs: 780,
            seed: 0,
            profile: SynthProfile::default(),
            rate_mix: DEFAULT_RATE_MIX,
        }
    }
}

/// Generates every patient from its own derived seed, writes the four
/// files per patient and then `manifest.json`.
pub fn generate_cohort(out: &Path, spec: &CohortSpec) -> Result<DatasetManifest> {
    if spec.n_patients == 0 {
        return Err(Error::Config("a cohort needs at least one patient".into()));
    }
    fs::create_dir_all(out).map_err(Error::io(out))?;
    let rates = cohort_rates(spec.n_patients, spec.rate_mix);
    let entries: Vec<Result<ManifestEntry>> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| {
            let id = patient_id(i);
            let profile = spec.profile.clone().with_seed(patient_seed(spec.seed, i as u64));
            let rec = generate_patient(&profile, &id, spec.n_epochs, rates[i], None)?;
            let entry = ManifestEntry {
                patient_id: id.clone(),
                eog_wav: format!("{id}_eog.wav"),
                eog_rate_hz: rec.eog_rate_hz,
                psm_stream: format!("{id}_psm.bin"),
                psm_header: format!("{id}_psm.txt"),
                labels: format!("{id}_labels.txt"),
            };
            write_eog_wav(&out.join(&entry.eog_wav), &rec.eog_left, &rec.eog_right, rec.eog_rate_hz)?;
            write_psm_stream(&out.join(&entry.psm_stream), &rec.psm_frames)?;
            let header = PsmHeader {
                rate_hz: rec.psm_rate_hz,
                frames: rec.psm_frames.len() / PSM_FRAME_LEN,
            };
            write_psm_header(&out.join(&entry.psm_header), &header)?;
            write_labels(&out.join(&entry.labels), &rec.labels)?;
            Ok(entry)
        })
        .collect();
    let manifest = DatasetManifest::new(entries.into_iter().collect::<Result<_>>()?);
    write_manifest(&out.join(MANIFEST_NAME), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_patients_use_one_high_rate_recording() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec {
            n_patients: 10,
            n_epochs: 1,
            ..CohortSpec::default()
        };
        let m = generate_cohort(dir.path(), &spec).unwrap();
        let high = m.patients.iter().filter(|p| p.eog_rate_hz == 512).count();
        assert_eq!((m.patients.len(), high), (10, 1));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 41);
    }

    #[test]
    fn same_seed_writes_identical_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = CohortSpec {
            n_patients: 2,
            n_epochs: 2,
            seed: 7,
            ..CohortSpec::default()
        };
        generate_cohort(a.path(), &spec).unwrap();
        generate_cohort(b.path(), &spec).unwrap();
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
    }

    #[test]
    fn zero_patients_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CohortSpec {
            n_patients: 0,
            ..CohortSpec::default()
        };
        assert_eq!(generate_cohort(dir.path(), &spec).unwrap_err().exit_code(), 1);
    }
}
