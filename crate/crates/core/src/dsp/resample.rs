//! Rational-ratio polyphase resampler with a Kaiser-windowed sinc kernel.
//!
//! The kernel spans 64 taps measured at the lower of the two rates, so a
//! decimating resampler reaches back proportionally further into its input.
//! Out-of-range input indices are filled by point reflection about the end
//! sample (`2 x[0] - x[k]`), which keeps constants and ramps exact at the edges.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::DspError;

pub const KAISER_BETA: f64 = 8.6;
pub const TAPS_PER_PHASE: usize = 64;
/// Cutoff as a fraction of the lower Nyquist frequency.
const CUTOFF_FRACTION: f64 = 0.92;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Debug, Clone)]
pub struct Resampler {
    src_rate: u32,
    dst_rate: u32,
    up: usize,
    down: usize,
    half: usize,
    /// `up` phases of `2 * half` coefficients each.
    table: Vec<f64>,
}

impl Resampler {
    pub fn new(src_rate_hz: u32, dst_rate_hz: u32) -> Result<Self, DspError> {
        if src_rate_hz == 0 || dst_rate_hz == 0 {
            return Err(DspError::InvalidRate {
                src: src_rate_hz,
                dst: dst_rate_hz,
            });
        }
        let g = gcd(u64::from(src_rate_hz), u64::from(dst_rate_hz));
        let up = (u64::from(dst_rate_hz) / g) as usize;
        let down = (u64::from(src_rate_hz) / g) as usize;
        let stretch = (down as f64 / up as f64).max(1.0);
        let half = libm::ceil(TAPS_PER_PHASE as f64 / 2.0 * stretch) as usize;
        let fc = 0.5 * CUTOFF_FRACTION / stretch;
        let norm = bessel_i0(KAISER_BETA);
        let width = 2 * half;

        let mut table = vec![0.0; if src_rate_hz == dst_rate_hz { 0 } else { up * width }];
        for (phase, row) in table.chunks_exact_mut(width.max(1)).enumerate() {
            let frac = phase as f64 / up as f64;
            for (slot, c) in row.iter_mut().enumerate() {
                let j = slot as f64 - half as f64 + 1.0;
                let tau = frac - j;
                let u = tau / half as f64;
                let window = if u.abs() >= 1.0 {
                    0.0
                } else {
                    bessel_i0(KAISER_BETA * libm::sqrt(1.0 - u * u)) / norm
                };
                let arg = 2.0 * fc * tau;
                let sinc = if arg == 0.0 {
                    1.0
                } else {
                    libm::sin(PI * arg) / (PI * arg)
                };
                *c = 2.0 * fc * sinc * window;
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|c| *c /= sum);
        }
        Ok(Self {
            src_rate: src_rate_hz,
            dst_rate: dst_rate_hz,
            up,
            down,
            half,
            table,
        })
    }

    pub fn src_rate(&self) -> u32 {
        self.src_rate
    }

    pub fn dst_rate(&self) -> u32 {
        self.dst_rate
    }

    /// `round(n * dst / src)`, halves rounding up.
    pub fn output_len(&self, n: usize) -> usize {
        let num = 2 * n as u128 * u128::from(self.dst_rate) + u128::from(self.src_rate);
        (num / (2 * u128::from(self.src_rate))) as usize
    }

    pub fn process(&self, input: &[f64]) -> Result<Vec<f64>, DspError> {
        if input.is_empty() {
            return Err(DspError::EmptySignal);
        }
        if self.src_rate == self.dst_rate {
            return Ok(input.to_vec());
        }
        let n_out = self.output_len(input.len());
        let n_in = input.len() as isize;
        let width = 2 * self.half;
        let mut out = Vec::with_capacity(n_out);
        for n in 0..n_out {
            let pos = n * self.down;
            let i0 = (pos / self.up) as isize;
            let phase = pos % self.up;
            let coeffs = &self.table[phase * width..(phase + 1) * width];
            let first = i0 - self.half as isize + 1;
            let acc = if first >= 0 && first + width as isize <= n_in {
                dot(&input[first as usize..first as usize + width], coeffs)
            } else {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * reflect(input, first + j as isize))
                    .sum()
            };
            out.push(acc);
        }
        Ok(out)
    }
}

/// Four independent accumulators, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn reflect(x: &[f64], k: isize) -> f64 {
    let last = x.len() as isize - 1;
    if k < 0 {
        2.0 * x[0] - x[(-k).min(last) as usize]
    } else if k > last {
        2.0 * x[last as usize] - x[(2 * last - k).max(0) as usize]
    } else {
        x[k as usize]
    }
}

/// One-shot convenience wrapper around [`Resampler`].
pub fn resample(signal: &[f64], src_rate_hz: u32, dst_rate_hz: u32) -> Result<Vec<f64>, DspError> {
    Resampler::new(src_rate_hz, dst_rate_hz)?.process(signal)
}
