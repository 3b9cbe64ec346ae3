//! Input adapters used by the baseline comparison models.

use alloc::vec::Vec;

use super::resample::resample;
use super::DspError;

/// Rate at which a 30 s epoch has exactly 3,000 samples.
pub const BASELINE_RATE_HZ: u32 = 100;

/// Corner-aligned bilinear interpolation of a row-major `h x w` grid.
pub fn bilinear_upscale(
    frame: &[f64],
    h: usize,
    w: usize,
    target_h: usize,
    target_w: usize,
) -> Result<Vec<f64>, DspError> {
    if h == 0 || w == 0 || frame.len() != h * w {
        return Err(DspError::ShapeMismatch("frame length does not match h x w"));
    }
    if target_h < h || target_w < w {
        return Err(DspError::TargetTooSmall {
            input: (h, w),
            target: (target_h, target_w),
        });
    }
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        if src == 1 || dst == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (src - 1) as f64 / (dst - 1) as f64;
        let i0 = (libm::floor(x) as usize).min(src - 2);
        (i0, i0 + 1, x - i0 as f64)
    };
    let mut out = Vec::with_capacity(target_h * target_w);
    for r in 0..target_h {
        let (r0, r1, fy) = coord(r, h, target_h);
        for c in 0..target_w {
            let (c0, c1, fx) = coord(c, w, target_w);
            let top = frame[r0 * w + c0] * (1.0 - fx) + frame[r0 * w + c1] * fx;
            let bottom = frame[r1 * w + c0] * (1.0 - fx) + frame[r1 * w + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(out)
}

/// Replicates a single-channel grid into three identical planes (R, G, B).
pub fn replicate_to_rgb(frame: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(frame.len() * 3);
    for _ in 0..3 {
        out.extend_from_slice(frame);
    }
    out
}

/// Sums per-channel input weights laid out as three consecutive planes,
/// turning an RGB input layer into a single-channel one.
pub fn collapse_rgb_weights(weights: &[f64]) -> Result<Vec<f64>, DspError> {
    if weights.len() % 3 != 0 {
        return Err(DspError::ShapeMismatch("weights are not three equal planes"));
    }
    let plane = weights.len() / 3;
    Ok((0..plane)
        .map(|i| weights[i] + weights[plane + i] + weights[2 * plane + i])
        .collect())
}

/// Resamples one 30 s channel to 100 Hz, giving 3,000 samples.
pub fn downsample_epoch_to_3000(channel: &[f64], native_rate_hz: u32) -> Result<Vec<f64>, DspError> {
    let expected = 30 * native_rate_hz as usize;
    if channel.len() != expected {
        return Err(DspError::EpochLength {
            expected,
            found: channel.len(),
        });
    }
    resample(channel, native_rate_hz, BASELINE_RATE_HZ)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn constant_frame_stays_constant() {
        let out = bilinear_upscale(&[0.7; 144], 18, 8, 224, 224).unwrap();
        assert_eq!(out.len(), 224 * 224);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_identity() {
        let f: Vec<f64> = (0..144).map(|i| i as f64 / 7.0).collect();
        assert_eq!(bilinear_upscale(&f, 18, 8, 18, 8).unwrap(), f);
    }

    #[test]
    fn checkerboard_center() {
        let out = bilinear_upscale(&[0.0, 1.0, 1.0, 0.0], 2, 2, 3, 3).unwrap();
        // Closed form at (0.5, 0.5): mean of the four corners.
        assert_eq!(out[4], 0.5);
        assert_eq!((out[0], out[2], out[6], out[8]), (0.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn shrinking_is_rejected() {
        assert!(matches!(
            bilinear_upscale(&[0.0; 144], 18, 8, 17, 8),
            Err(DspError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn rgb_helpers() {
        let f = [0.1, 0.2];
        assert_eq!(replicate_to_rgb(&f), vec![0.1, 0.2, 0.1, 0.2, 0.1, 0.2]);
        assert_eq!(collapse_rgb_weights(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(), vec![9.0, 12.0]);
        assert!(collapse_rgb_weights(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn downsampling_lengths_and_constants() {
        assert_eq!(downsample_epoch_to_3000(&vec![0.0; 7500], 250).unwrap().len(), 3000);
        let y = downsample_epoch_to_3000(&vec![0.42; 15_360], 512).unwrap();
        assert_eq!(y.len(), 3000);
        assert!(y.iter().all(|v| (v - 0.42).abs() < 1e-6));
        assert!(downsample_epoch_to_3000(&vec![0.0; 7499], 250).is_err());
    }

    proptest! {
        #[test]
        fn upscale_stays_in_range_and_commutes_with_affine_maps(
            vals in proptest::collection::vec(-5.0f64..5.0, 144),
            th in 18usize..60,
            tw in 8usize..40,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let up = bilinear_upscale(&vals, 18, 8, th, tw).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(up.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            let mapped: Vec<f64> = vals.iter().map(|v| alpha * v + beta).collect();
            let up2 = bilinear_upscale(&mapped, 18, 8, th, tw).unwrap();
            for (a, b) in up.iter().zip(&up2) {
                prop_assert!((alpha * a + beta - b).abs() <= 1e-12);
            }
        }
    }
}
