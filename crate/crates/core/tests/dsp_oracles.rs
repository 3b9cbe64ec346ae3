//! DSP properties checked against independent oracles (rustfft, direct
//! scans of the constructed filterbank).

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use sleepfuse_core::dsp::{
    log_mel_spectrogram, mel_filterbank, resample, LogMelExtractor, MelConfig,
};

fn spectrum_magnitudes(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..x.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

#[test]
fn resampled_50hz_tone_keeps_peak_and_amplitude() {
    let x: Vec<f64> = (0..7500)
        .map(|i| (2.0 * PI * 50.0 * i as f64 / 250.0).sin())
        .collect();
    let y = resample(&x, 250, 16_000).unwrap();
    assert_eq!(y.len(), 480_000);
    let mags = spectrum_magnitudes(&y);
    let (peak, mag) = mags
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (k, &m)| if m > best.1 { (k, m) } else { best });
    // 30 s window: bin spacing 1/30 Hz, so 50 Hz sits on bin 1500.
    let bin_hz = 16_000.0 / y.len() as f64;
    assert!((peak as f64 * bin_hz - 50.0).abs() <= bin_hz, "peak at bin {peak}");
    let amplitude = 2.0 * mag / y.len() as f64;
    assert!((amplitude - 1.0).abs() <= 0.01, "amplitude {amplitude}");
}

#[test]
fn filterbank_covers_the_band_and_peaks_are_ordered() {
    let cfg = MelConfig::default();
    let bank = mel_filterbank(&cfg).unwrap();
    let dense = bank.to_dense();
    let (rows, cols) = (bank.n_mels(), bank.n_bins());
    assert_eq!((rows, cols), (128, 257));

    let bin_hz = 16_000.0 / 512.0;
    for k in 0..cols {
        let f = k as f64 * bin_hz;
        if f > cfg.f_min_hz && f < cfg.f_max_hz {
            let col: f64 = (0..rows).map(|r| dense[r * cols + k]).sum();
            assert!(col > 0.0, "bin {k} ({f} Hz) uncovered");
        }
    }

    let argmax: Vec<usize> = (0..rows)
        .map(|r| {
            let row = &dense[r * cols..(r + 1) * cols];
            (0..cols).fold(0, |b, k| if row[k] > row[b] { k } else { b })
        })
        .collect();
    assert!(argmax.windows(2).all(|w| w[0] <= w[1]), "row peaks not monotone");
    assert!(argmax.first() < argmax.last());
    assert!(bank.centers_hz().windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn log_mel_shape_for_both_native_rates() {
    let cfg = MelConfig::default();
    for &rate in &[250u32, 512] {
        let n = 30 * rate as usize;
        let l: Vec<f32> = (0..n).map(|i| 0.5 + 0.1 * ((i as f32) * 0.3).sin()).collect();
        let r: Vec<f32> = (0..n).map(|i| 0.5 + 0.2 * ((i as f32) * 0.05).cos()).collect();
        let spec = log_mel_spectrogram(&[&l, &r], rate, &cfg).unwrap();
        assert_eq!(spec.shape(), (2, 128, 2998));
        assert!(spec.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn log_mel_is_bit_deterministic() {
    let cfg = MelConfig::default();
    let l: Vec<f32> = (0..7500).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
    let a = log_mel_spectrogram(&[&l, &l], 250, &cfg).unwrap();
    let b = log_mel_spectrogram(&[&l, &l], 250, &cfg).unwrap();
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn pure_tone_lands_in_the_nearest_row_peak() {
    let cfg = MelConfig::default();
    let bank = mel_filterbank(&cfg).unwrap();
    let dense = bank.to_dense();
    let cols = bank.n_bins();
    let bin_hz = 16_000.0 / 512.0;
    // Row-peak frequency of every filter, then the set of rows whose peak is
    // nearest to the tone.
    let peak_hz: Vec<f64> = (0..bank.n_mels())
        .map(|r| {
            let row = &dense[r * cols..(r + 1) * cols];
            (0..cols).fold(0, |b, k| if row[k] > row[b] { k } else { b }) as f64 * bin_hz
        })
        .collect();
    let best = peak_hz
        .iter()
        .map(|p| (p - 100.0).abs())
        .fold(f64::INFINITY, f64::min);
    let allowed: Vec<usize> = (0..peak_hz.len())
        .filter(|&r| ((peak_hz[r] - 100.0).abs() - best).abs() < 1e-9)
        .collect();

    for &rate in &[250u32, 512] {
        let x: Vec<f32> = (0..30 * rate as usize)
            .map(|i| 0.5 + 0.4 * (2.0 * PI * 100.0 * i as f64 / rate as f64).sin() as f32)
            .collect();
        let spec = log_mel_spectrogram(&[&x], rate, &cfg).unwrap();
        for t in 0..spec.n_frames {
            let m = (0..spec.n_mels).fold(0, |b, m| {
                if spec.get(0, m, t) > spec.get(0, b, t) {
                    m
                } else {
                    b
                }
            });
            assert!(allowed.contains(&m), "rate {rate} frame {t}: mel {m} not in {allowed:?}");
        }
    }
}

#[test]
fn hann_stft_concentrates_tone_energy() {
    let cfg = MelConfig::default();
    let mut ex = LogMelExtractor::new(cfg).unwrap();
    let bin_hz = 16_000.0 / 512.0;
    for &f in &[440.0, 1000.0, 1234.5, 3000.0, 6500.0] {
        let x: Vec<f64> = (0..16_000).map(|i| (2.0 * PI * f * i as f64 / 16_000.0).sin()).collect();
        let frames = ex.power_frames(&x).unwrap();
        let center = f / bin_hz;
        for power in &frames {
            let total: f64 = power.iter().sum();
            let near: f64 = power
                .iter()
                .enumerate()
                .filter(|(k, _)| (*k as f64 - center).abs() <= 2.0)
                .map(|(_, p)| p)
                .sum();
            assert!(near / total >= 0.9, "{f} Hz: {}", near / total);
        }
    }
}
