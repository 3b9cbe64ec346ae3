//! Radix-2 FFT used by the STFT. Real input of length `n` is packed into a
//! half-length complex transform and split afterwards.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

/// In-place complex FFT plan for a fixed power-of-two length.
#[derive(Debug, Clone)]
struct ComplexFft {
    n: usize,
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl ComplexFft {
    fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 2);
        let bits = n.trailing_zeros();
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex {
                    re: libm::cos(a),
                    im: libm::sin(a),
                }
            })
            .collect();
        let bitrev = (0..n)
            .map(|i| i.reverse_bits() >> (usize::BITS - bits))
            .collect();
        Self { n, twiddles, bitrev }
    }

    fn process(&self, buf: &mut [Complex]) {
        debug_assert_eq!(buf.len(), self.n);
        for i in 0..self.n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.n {
            let half = len / 2;
            let stride = self.n / len;
            for start in (0..self.n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half].mul(w);
                    buf[start + k] = Complex {
                        re: a.re + b.re,
                        im: a.im + b.im,
                    };
                    buf[start + k + half] = Complex {
                        re: a.re - b.re,
                        im: a.im - b.im,
                    };
                }
            }
            len <<= 1;
        }
    }
}

/// Power spectrum of real frames of a fixed power-of-two length.
#[derive(Debug, Clone)]
pub(crate) struct RealPowerFft {
    n: usize,
    inner: ComplexFft,
    split: Vec<Complex>,
    scratch: Vec<Complex>,
}

impl RealPowerFft {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 4);
        let split = (0..n / 2)
            .map(|k| {
                let a = -2.0 * PI * k as f64 / n as f64;
                Complex {
                    re: libm::cos(a),
                    im: libm::sin(a),
                }
            })
            .collect();
        Self {
            n,
            inner: ComplexFft::new(n / 2),
            split,
            scratch: vec![Complex::default(); n / 2],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Writes `|X[k]|^2` for `k = 0..=n/2` into `out`. `input` may be shorter
    /// than `n`; the remainder is zero padded.
    pub fn power(&mut self, input: &[f64], out: &mut [f64]) {
        let h = self.n / 2;
        debug_assert!(input.len() <= self.n);
        debug_assert_eq!(out.len(), h + 1);
        for (i, z) in self.scratch.iter_mut().enumerate() {
            z.re = input.get(2 * i).copied().unwrap_or(0.0);
            z.im = input.get(2 * i + 1).copied().unwrap_or(0.0);
        }
        self.inner.process(&mut self.scratch);
        let z = &self.scratch;
        out[0] = (z[0].re + z[0].im) * (z[0].re + z[0].im);
        out[h] = (z[0].re - z[0].im) * (z[0].re - z[0].im);
        for k in 1..h {
            let a = z[k];
            let b = z[h - k];
            // Even and odd sub-spectra of the interleaved real sequence.
            let e = Complex {
                re: 0.5 * (a.re + b.re),
                im: 0.5 * (a.im - b.im),
            };
            let o = Complex {
                re: 0.5 * (a.im + b.im),
                im: -0.5 * (a.re - b.re),
            };
            let t = o.mul(self.split[k]);
            let re = e.re + t.re;
            let im = e.im + t.im;
            out[k] = re * re + im * im;
        }
    }
}
