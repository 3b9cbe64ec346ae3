use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dsp::{LogMelExtractor, MelConfig, Resampler};
use crate::encoders::{tokenize_clip, tokenize_spectrogram, EncoderConfig, Tokens};
use crate::fusion::{FusionMode, FusionModel, ModelInput, TrainingRegime};
use crate::ingest::{EpochRecord, EOG_RATES_HZ};
use crate::stage::SleepStage;

/// One labelled epoch in model-ready form: tokens for the toy encoders,
/// precomputed embeddings for an external encoder, or both.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patient_id: String,
    pub epoch_index: u32,
    pub label: SleepStage,
    pub audio: Option<Tokens>,
    pub video: Option<Tokens>,
    pub eog_embedding: Option<Vec<f64>>,
    pub psm_embedding: Option<Vec<f64>>,
}

impl Sample {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            audio: self.audio.as_ref(),
            video: self.video.as_ref(),
            eog_embedding: self.eog_embedding.as_deref(),
            psm_embedding: self.psm_embedding.as_deref(),
        }
    }

    pub fn key(&self) -> (&str, u32) {
        (&self.patient_id, self.epoch_index)
    }
}

/// Every recording is brought down to this rate before the mel stage, so
/// 250 Hz and 512 Hz patients share one passband. Otherwise the faster
/// recordings fill mel bins that are always empty for the slower ones.
pub const COMMON_EOG_RATE_HZ: u32 = EOG_RATES_HZ[0];

/// Turns epochs into token samples. Audio tokens are log-mel values minus
/// `ln(log_floor)`, so silent bins are 0. Holds the FFT plan and resampler
/// caches, so keep one per worker.
pub struct Featurizer {
    mel: LogMelExtractor,
    encoder: EncoderConfig,
    to_common: Vec<Resampler>,
}

impl Featurizer {
    pub fn new(mel: MelConfig, encoder: EncoderConfig) -> Result<Self, ExperimentError> {
        encoder.validate()?;
        Ok(Self {
            mel: LogMelExtractor::new(mel)?,
            encoder,
            to_common: Vec::new(),
        })
    }

    fn common_rate_eog(&mut self, epoch: &EpochRecord) -> Result<[Vec<f32>; 2], ExperimentError> {
        let rate = epoch.native_eog_rate_hz;
        let pos = match self.to_common.iter().position(|r| r.src_rate() == rate) {
            Some(p) => p,
            None => {
                self.to_common.push(Resampler::new(rate, COMMON_EOG_RATE_HZ)?);
                self.to_common.len() - 1
            }
        };
        let r = &self.to_common[pos];
        let down = |ch: &[f32]| -> Result<Vec<f32>, ExperimentError> {
            let x: Vec<f64> = ch.iter().map(|&v| f64::from(v)).collect();
            Ok(r.process(&x)?.into_iter().map(|v| v as f32).collect())
        };
        Ok([down(&epoch.eog[0])?, down(&epoch.eog[1])?])
    }

    pub fn mel(&mut self) -> &mut LogMelExtractor {
        &mut self.mel
    }

    pub fn featurize(&mut self, epoch: &EpochRecord) -> Result<Sample, ExperimentError> {
        let mut spec = if epoch.native_eog_rate_hz > COMMON_EOG_RATE_HZ {
            let eog = self.common_rate_eog(epoch)?;
            self.mel.compute(&[&eog[0], &eog[1]], COMMON_EOG_RATE_HZ)?
        } else {
            self.mel.compute(&[&epoch.eog[0], &epoch.eog[1]], epoch.native_eog_rate_hz)?
        };
        // EOG energy sits in the lowest few mel bins and the rest read
        // ln(log_floor); referencing tokens to the floor makes those zero.
        let floor = libm::log(self.mel.config().log_floor) as f32;
        spec.values.iter_mut().for_each(|v| *v -= floor);
        let audio = tokenize_spectrogram(&spec, self.encoder.patch_len, self.encoder.time_pool)?;
        let video = tokenize_clip(&epoch.psm_clip, self.encoder.frame_stride)?;
        Ok(Sample {
            patient_id: epoch.patient_id.clone(),
            epoch_index: epoch.epoch_index,
            label: epoch.label,
            audio: Some(audio),
            video: Some(video),
            eog_embedding: None,
            psm_embedding: None,
        })
    }
}

/// How to build a fresh model for a fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Toy {
        encoder: EncoderConfig,
        eog_channels: usize,
        n_mels: usize,
    },
    External { eog_dim: usize, psm_dim: usize },
}

impl ModelSpec {
    pub fn toy(encoder: EncoderConfig, mel: &MelConfig) -> Self {
        ModelSpec::Toy {
            encoder,
            eog_channels: 2,
            n_mels: mel.n_mels,
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            ModelSpec::Toy { .. } => "toy_encoders",
            ModelSpec::External { .. } => "external_embeddings",
        }
    }

    pub fn build(&self, mode: FusionMode, regime: TrainingRegime, seed: u64) -> Result<FusionModel, ExperimentError> {
        Ok(match self {
            ModelSpec::Toy {
                encoder,
                eog_channels,
                n_mels,
            } => FusionModel::toy(mode, regime, encoder, *eog_channels, *n_mels, seed)?,
            ModelSpec::External { eog_dim, psm_dim } => FusionModel::external(mode, regime, *eog_dim, *psm_dim, seed)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{EPOCH_SECONDS, PSM_FRAMES_PER_EPOCH, PSM_FRAME_LEN};
    use alloc::vec;
    use core::f64::consts::PI;

    fn epoch(rate: u32, extra_hz: Option<f64>) -> EpochRecord {
        let n = EPOCH_SECONDS * rate as usize;
        let ch: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / f64::from(rate);
                let hf = extra_hz.map_or(0.0, |f| 0.2 * libm::sin(2.0 * PI * f * t));
                (0.5 + 0.2 * libm::sin(2.0 * PI * 40.0 * t) + hf) as f32
            })
            .collect();
        EpochRecord {
            patient_id: "P000".into(),
            epoch_index: 0,
            psm_clip: vec![0.5; PSM_FRAMES_PER_EPOCH * PSM_FRAME_LEN],
            eog: [ch.clone(), ch],
            native_eog_rate_hz: rate,
            label: SleepStage::Wake,
        }
    }

    #[test]
    fn fast_recordings_lose_content_the_slow_rate_cannot_carry() {
        let mut fz = Featurizer::new(MelConfig::default(), EncoderConfig::default()).unwrap();
        let slow = fz.featurize(&epoch(250, None)).unwrap().audio.unwrap();
        let fast = fz.featurize(&epoch(512, Some(200.0))).unwrap().audio.unwrap();
        assert_eq!((slow.n_tokens, slow.width), (fast.n_tokens, fast.width));
        let worst = slow.data.iter().zip(&fast.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(worst < 0.5, "{worst}");
        // Without the common-rate step the 200 Hz tone shows up in its mel bin.
        let cfg = MelConfig::default();
        let bank = crate::dsp::mel_filterbank(&cfg).unwrap();
        let bin = bank.centers_hz().iter().position(|&c| c >= 200.0).unwrap();
        let e = epoch(512, Some(200.0));
        let direct = LogMelExtractor::new(cfg.clone()).unwrap().compute(&[&e.eog[0], &e.eog[1]], 512).unwrap();
        let row = &direct.values[bin * direct.n_frames..(bin + 1) * direct.n_frames];
        let floor = libm::log(cfg.log_floor) as f32;
        assert!(row.iter().all(|&v| v - floor > 5.0));
    }
}
