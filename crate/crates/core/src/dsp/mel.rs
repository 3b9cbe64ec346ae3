//! Mel filterbank and log-mel spectrograms.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::fft::RealPowerFft;
use super::resample::Resampler;
use super::DspError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub target_rate_hz: u32,
    pub n_mels: usize,
    pub window_length_s: f64,
    pub hop_length_s: f64,
    pub fft_size: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            target_rate_hz: 16_000,
            n_mels: 128,
            window_length_s: 0.025,
            hop_length_s: 0.010,
            fft_size: 512,
            f_min_hz: 0.0,
            f_max_hz: 8_000.0,
            log_floor: 1e-6,
        }
    }
}

impl MelConfig {
    pub fn window_samples(&self) -> usize {
        libm::round(self.window_length_s * f64::from(self.target_rate_hz)) as usize
    }

    pub fn hop_samples(&self) -> usize {
        libm::round(self.hop_length_s * f64::from(self.target_rate_hz)) as usize
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for `samples` input samples at the target rate.
    pub fn frame_count(&self, samples: usize) -> usize {
        let win = self.window_samples();
        if samples < win {
            0
        } else {
            1 + (samples - win) / self.hop_samples()
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |why| Err(DspError::InvalidConfig(why));
        if self.target_rate_hz == 0 {
            return bad("target rate must be positive");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < 4 {
            return bad("fft_size must be a power of two >= 4");
        }
        if self.window_samples() == 0 || self.window_samples() > self.fft_size {
            return bad("window must be non-empty and fit in fft_size");
        }
        if self.hop_samples() == 0 {
            return bad("hop must be at least one sample");
        }
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz) {
            return bad("need 0 <= f_min < f_max");
        }
        if self.f_max_hz > f64::from(self.target_rate_hz) / 2.0 {
            return bad("f_max exceeds Nyquist");
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
struct SparseRow {
    start: usize,
    weights: Vec<f64>,
}

/// Triangular filters on the mel scale, stored as sparse rows.
///
/// Each weight is the mean of the triangle over the frequency interval that
/// its FFT bin represents. Narrow low-frequency filters that fall between bin
/// centers therefore still receive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    n_bins: usize,
    rows: Vec<SparseRow>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn n_mels(&self) -> usize {
        self.rows.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Peak frequency of each triangle.
    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    /// Row-major `n_mels x n_bins` matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows.len() * self.n_bins];
        for (r, row) in self.rows.iter().enumerate() {
            let base = r * self.n_bins + row.start;
            m[base..base + row.weights.len()].copy_from_slice(&row.weights);
        }
        m
    }

    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row
                .weights
                .iter()
                .zip(&power[row.start..])
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

pub fn mel_filterbank(cfg: &MelConfig) -> Result<MelFilterbank, DspError> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let df = f64::from(cfg.target_rate_hz) / cfg.fft_size as f64;
    let lo = hz_to_mel(cfg.f_min_hz);
    let hi = hz_to_mel(cfg.f_max_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();

    let mut rows = Vec::with_capacity(cfg.n_mels);
    for m in 0..cfg.n_mels {
        let (l, c, u) = (edges[m], edges[m + 1], edges[m + 2]);
        // Antiderivative of the unit-peak triangle on [l, u].
        let area = |x: f64| -> f64 {
            if x <= l {
                0.0
            } else if x <= c {
                (x - l) * (x - l) / (2.0 * (c - l))
            } else if x <= u {
                (c - l) / 2.0 + (u - c) / 2.0 - (u - x) * (u - x) / (2.0 * (u - c))
            } else {
                (u - l) / 2.0
            }
        };
        let weight = |k: usize| {
            let f = k as f64 * df;
            (area(f + 0.5 * df) - area(f - 0.5 * df)) / df
        };
        let first = (0..n_bins).find(|&k| weight(k) > 0.0).unwrap_or(0);
        let last = (first..n_bins).rev().find(|&k| weight(k) > 0.0).unwrap_or(first);
        rows.push(SparseRow {
            start: first,
            weights: (first..=last).map(weight).collect(),
        });
    }
    Ok(MelFilterbank {
        n_bins,
        rows,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
    })
}

/// Log-mel energies laid out `[channel][mel][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub channels: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn get(&self, channel: usize, mel: usize, frame: usize) -> f32 {
        self.values[(channel * self.n_mels + mel) * self.n_frames + frame]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.n_mels, self.n_frames)
    }
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / len as f64))
        .collect()
}

/// Reusable log-mel pipeline: holds the filterbank, FFT plan and one
/// resampler per native rate seen so far.
#[derive(Debug, Clone)]
pub struct LogMelExtractor {
    cfg: MelConfig,
    bank: MelFilterbank,
    fft: RealPowerFft,
    window: Vec<f64>,
    resamplers: Vec<Resampler>,
}

impl LogMelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self, DspError> {
        let bank = mel_filterbank(&cfg)?;
        Ok(Self {
            fft: RealPowerFft::new(cfg.fft_size),
            window: hann(cfg.window_samples()),
            bank,
            cfg,
            resamplers: Vec::new(),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.bank
    }

    fn resampler(&mut self, native_rate_hz: u32) -> Result<&Resampler, DspError> {
        let pos = match self
            .resamplers
            .iter()
            .position(|r| r.src_rate() == native_rate_hz)
        {
            Some(p) => p,
            None => {
                self.resamplers
                    .push(Resampler::new(native_rate_hz, self.cfg.target_rate_hz)?);
                self.resamplers.len() - 1
            }
        };
        Ok(&self.resamplers[pos])
    }

    /// Hann-windowed STFT power frames of a signal already at the target
    /// rate, `n_frames x n_bins`.
    pub fn power_frames(&mut self, signal: &[f64]) -> Result<Vec<Vec<f64>>, DspError> {
        let n_frames = self.cfg.frame_count(signal.len());
        if n_frames == 0 {
            return Err(DspError::SignalTooShort {
                samples: signal.len(),
                window: self.cfg.window_samples(),
            });
        }
        let hop = self.cfg.hop_samples();
        let win = self.window.len();
        let mut frame = vec![0.0; win];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let seg = &signal[t * hop..t * hop + win];
            for ((f, s), w) in frame.iter_mut().zip(seg).zip(&self.window) {
                *f = s * w;
            }
            let mut power = vec![0.0; self.fft.len() / 2 + 1];
            self.fft.power(&frame, &mut power);
            out.push(power);
        }
        Ok(out)
    }

    /// Per channel: mean removal, resampling to the target rate, STFT power,
    /// mel projection and `ln(energy + log_floor)`.
    pub fn compute(
        &mut self,
        channels: &[&[f32]],
        native_rate_hz: u32,
    ) -> Result<MelSpectrogram, DspError> {
        if channels.is_empty() || channels.len() > 2 {
            return Err(DspError::ChannelCount(channels.len()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(DspError::ShapeMismatch("channels differ in length"));
        }
        if len == 0 {
            return Err(DspError::EmptySignal);
        }
        let n_mels = self.bank.n_mels();
        let mut values = Vec::new();
        let mut n_frames = 0;
        let mut mel = vec![0.0; n_mels];
        for ch in channels {
            let mean = ch.iter().map(|&v| f64::from(v)).sum::<f64>() / len as f64;
            let centered: Vec<f64> = ch.iter().map(|&v| f64::from(v) - mean).collect();
            let upsampled = self.resampler(native_rate_hz)?.process(&centered)?;
            let frames = self.power_frames(&upsampled)?;
            n_frames = frames.len();
            let base = values.len();
            values.resize(base + n_mels * n_frames, 0.0f32);
            for (t, power) in frames.iter().enumerate() {
                self.bank.apply(power, &mut mel);
                for (m, e) in mel.iter().enumerate() {
                    values[base + m * n_frames + t] = libm::log(e + self.cfg.log_floor) as f32;
                }
            }
        }
        Ok(MelSpectrogram {
            channels: channels.len(),
            n_mels,
            n_frames,
            values,
        })
    }
}

/// One-shot log-mel spectrogram of a one- or two-channel epoch.
pub fn log_mel_spectrogram(
    channels: &[&[f32]],
    native_rate_hz: u32,
    cfg: &MelConfig,
) -> Result<MelSpectrogram, DspError> {
    LogMelExtractor::new(cfg.clone())?.compute(channels, native_rate_hz)
}
