//! Deterministic synthetic nights with stage-dependent EOG and pressure-mat
//! signatures.
//!
//! The signatures are frequency and energy caricatures chosen so that
//! separability is controllable; they make no claim of physiological
//! realism. EOG per stage is a few sinusoids drawn from a stage band, with
//! optional blinks; the mat shows a body imprint that breathes, shifts
//! posture and smears during movement bursts.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{
    PatientRecording, EOG_MAX_ABS, EOG_RATES_HZ, EPOCH_SECONDS, PSM_COLS, PSM_FRAMES_PER_EPOCH,
    PSM_FRAME_LEN, PSM_MAX_COUNT, PSM_RATE_HZ, PSM_ROWS,
};
use crate::stage::{SleepStage, STAGE_COUNT};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("n_epochs must be at least 1")]
    NoEpochs,
    #[error("unsupported EOG rate {0} Hz")]
    Rate(u32),
    #[error("stage sequence has {found} entries, expected {expected}")]
    SequenceLength { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EogSignature {
    /// Dominant frequency band `(lo, hi)` in Hz.
    pub band_hz: (f64, f64),
    /// Peak deflection in ADC counts.
    pub amplitude: f64,
    /// Correlation between left and right channels, in `[-1, 1]`.
    pub correlation: f64,
    /// Expected blinks per second.
    pub blink_rate_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsmSignature {
    /// Expected movement bursts per 30 s epoch.
    pub burst_rate: f64,
    /// Probability of a posture change at the start of an epoch.
    pub posture_shift_prob: f64,
    pub breathing_hz: f64,
    /// Relative torso pressure swing per breath.
    pub breathing_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub eog: [EogSignature; STAGE_COUNT],
    pub psm: [PsmSignature; STAGE_COUNT],
    /// Scales additive Gaussian noise on both sensors; 0 disables it.
    pub noise_level: f64,
    /// Stage probabilities in code order.
    pub priors: [f64; STAGE_COUNT],
    /// Probability of keeping the current stage for the next epoch.
    pub stay_prob: f64,
    /// Draw stages independently from `priors` instead of the transition
    /// model.
    pub iid_stages: bool,
    pub seed: u64,
}

/// Stage adjacency used by the transition model, in code order
/// (Wake, NREM1, NREM2, NREM3, REM).
const ADJACENT: [[bool; STAGE_COUNT]; STAGE_COUNT] = [
    [false, true, false, false, true],
    [true, false, true, false, true],
    [false, true, false, true, true],
    [false, false, true, false, false],
    [true, true, true, false, false],
];
const NON_ADJACENT_WEIGHT: f64 = 0.05;

/// EOG noise standard deviation in counts per unit of `noise_level` at
/// 250 Hz. Higher rates scale it by `sqrt(rate / 250)` so the in-band noise
/// density does not depend on the acquisition rate.
const EOG_NOISE_COUNTS: f64 = 150.0;
/// Mat noise standard deviation in counts per unit of `noise_level`.
const PSM_NOISE_COUNTS: f64 = 40.0;

fn eog(lo: f64, hi: f64, amplitude: f64, correlation: f64, blink_rate_hz: f64) -> EogSignature {
    EogSignature {
        band_hz: (lo, hi),
        amplitude,
        correlation,
        blink_rate_hz,
    }
}

fn psm(burst_rate: f64, posture_shift_prob: f64, breathing_hz: f64, breathing_depth: f64) -> PsmSignature {
    PsmSignature {
        burst_rate,
        posture_shift_prob,
        breathing_hz,
        breathing_depth,
    }
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            eog: [
                eog(85.0, 95.0, 700.0, 0.3, 0.3),
                eog(38.0, 45.0, 450.0, 0.5, 0.0),
                eog(12.0, 16.0, 300.0, 0.6, 0.0),
                eog(0.5, 2.0, 900.0, 0.8, 0.0),
                eog(65.0, 75.0, 800.0, -0.8, 0.0),
            ],
            psm: [
                psm(3.0, 0.3, 0.30, 0.03),
                psm(1.0, 0.1, 0.27, 0.05),
                psm(0.3, 0.05, 0.25, 0.06),
                psm(0.05, 0.02, 0.22, 0.09),
                psm(0.2, 0.02, 0.33, 0.04),
            ],
            noise_level: 1.0,
            priors: [0.15, 0.10, 0.45, 0.15, 0.15],
            stay_prob: 0.85,
            iid_stages: false,
            seed: 0,
        }
    }
}

impl SynthProfile {
    /// Wake and NREM1 share one EOG signature, so EOG alone cannot tell
    /// them apart; every sleep stage shares one quiet mat signature, so the
    /// mat only separates Wake from sleep. Stages are i.i.d. uniform.
    pub fn complementary() -> Self {
        let base = Self::default();
        let mut eog = base.eog;
        eog[SleepStage::Nrem1.code() as usize] = eog[SleepStage::Wake.code() as usize];
        let quiet = psm(0.0, 0.0, 0.25, 0.06);
        let restless = psm(4.0, 0.5, 0.25, 0.06);
        Self {
            eog,
            psm: [restless, quiet, quiet, quiet, quiet],
            priors: [0.2; STAGE_COUNT],
            iid_stages: true,
            ..base
        }
    }

    pub fn with_uniform_priors(mut self) -> Self {
        self.priors = [0.2; STAGE_COUNT];
        self
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, eog_rate_hz: u32) -> Result<(), SynthError> {
        let bad = |why: String| Err(SynthError::Profile(why));
        let nyquist = f64::from(eog_rate_hz) / 2.0;
        for (stage, s) in SleepStage::ALL.iter().zip(&self.eog) {
            let (lo, hi) = s.band_hz;
            if !(lo > 0.0 && lo <= hi && hi < nyquist) {
                return bad(format!("{stage} EOG band {lo}..{hi} Hz not inside (0, {nyquist})"));
            }
            if !(s.amplitude >= 0.0 && s.amplitude <= f64::from(EOG_MAX_ABS)) {
                return bad(format!("{stage} EOG amplitude {}", s.amplitude));
            }
            if !(-1.0..=1.0).contains(&s.correlation) || !(s.blink_rate_hz >= 0.0) {
                return bad(format!("{stage} EOG correlation/blink rate out of range"));
            }
        }
        for (stage, s) in SleepStage::ALL.iter().zip(&self.psm) {
            if !(0.0..=1.0).contains(&s.posture_shift_prob) {
                return bad(format!("{stage} posture shift probability {}", s.posture_shift_prob));
            }
            if !(s.burst_rate >= 0.0 && s.burst_rate <= 30.0) {
                return bad(format!("{stage} burst rate {}", s.burst_rate));
            }
            if !(s.breathing_hz > 0.0 && s.breathing_hz < f64::from(PSM_RATE_HZ) / 2.0)
                || !(0.0..1.0).contains(&s.breathing_depth)
            {
                return bad(format!("{stage} breathing parameters out of range"));
            }
        }
        if !(0.0..=1.0).contains(&self.stay_prob) {
            return bad(format!("stay probability {}", self.stay_prob));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return bad(format!("noise level {}", self.noise_level));
        }
        if self.priors.iter().any(|&p| !(p >= 0.0)) || self.priors.iter().sum::<f64>() <= 0.0 {
            return bad("priors must be nonnegative with a positive sum".into());
        }
        Ok(())
    }
}

fn pick<R: Rng>(weights: &[f64; STAGE_COUNT], rng: &mut R) -> SleepStage {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return SleepStage::ALL[i];
        }
        u -= w;
    }
    // Rounding can leave u just above the last bucket.
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    SleepStage::ALL[last]
}

/// First-order stage sequence: stay with `stay_prob`, otherwise move with
/// weights `prior[j]`, damped for non-adjacent stages.
pub fn sample_stages<R: Rng>(profile: &SynthProfile, n: usize, rng: &mut R) -> Vec<SleepStage> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    if profile.iid_stages {
        out.extend((0..n).map(|_| pick(&profile.priors, rng)));
        return out;
    }
    let mut cur = pick(&profile.priors, rng);
    out.push(cur);
    for _ in 1..n {
        if rng.random::<f64>() >= profile.stay_prob {
            let i = cur.code() as usize;
            let mut w = profile.priors;
            w[i] = 0.0;
            for (j, wj) in w.iter_mut().enumerate() {
                if !ADJACENT[i][j] {
                    *wj *= NON_ADJACENT_WEIGHT;
                }
            }
            if w.iter().sum::<f64>() > 0.0 {
                cur = pick(&w, rng);
            }
        }
        out.push(cur);
    }
    out
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Sum of three sinusoids with frequencies drawn from `band`.
fn band_signal<R: Rng>(band: (f64, f64), amplitude: f64, n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for _ in 0..3 {
        let f = if band.1 > band.0 { rng.random_range(band.0..band.1) } else { band.0 };
        let a = amplitude / 3.0 * rng.random_range(0.8..1.2);
        let phase = rng.random_range(0.0..2.0 * PI);
        let w = 2.0 * PI * f / rate;
        for (i, v) in x.iter_mut().enumerate() {
            *v += a * libm::sin(w * i as f64 + phase);
        }
    }
    x
}

fn synth_eog_epoch<R: Rng>(
    sig: &EogSignature,
    noise_level: f64,
    rate: u32,
    offset: f64,
    rng: &mut R,
    left: &mut Vec<i16>,
    right: &mut Vec<i16>,
) {
    let n = EPOCH_SECONDS * rate as usize;
    let fs = f64::from(rate);
    let shared = band_signal(sig.band_hz, sig.amplitude, n, fs, rng);
    let own = band_signal(sig.band_hz, sig.amplitude, n, fs, rng);
    let c = sig.correlation;
    let s = libm::sqrt(1.0 - c * c);
    let mut blinks = vec![0.0; n];
    let expected = sig.blink_rate_hz * EPOCH_SECONDS as f64;
    if expected > 0.0 {
        for sec in 0..EPOCH_SECONDS {
            if rng.random::<f64>() < expected / EPOCH_SECONDS as f64 {
                let center = (sec as f64 + rng.random::<f64>()) * fs;
                let width = 0.08 * fs;
                let lo = (center - 4.0 * width).max(0.0) as usize;
                let hi = ((center + 4.0 * width) as usize).min(n);
                for (i, b) in blinks.iter_mut().enumerate().take(hi).skip(lo) {
                    let z = (i as f64 - center) / width;
                    *b += 1200.0 * libm::exp(-0.5 * z * z);
                }
            }
        }
    }
    let sd = noise_level * EOG_NOISE_COUNTS * libm::sqrt(fs / 250.0);
    let clip = |v: f64| libm::round(v.clamp(-f64::from(EOG_MAX_ABS), f64::from(EOG_MAX_ABS))) as i16;
    for i in 0..n {
        let l = shared[i] + blinks[i] + offset + sd * normal(rng);
        let r = c * shared[i] + s * own[i] + blinks[i] + offset + sd * normal(rng);
        left.push(clip(l));
        right.push(clip(r));
    }
}

/// Pressure imprint of a body lying with its midline at column `center`.
fn body_map(center: f64, spread: f64, weight: f64) -> [f64; PSM_FRAME_LEN] {
    // (row, relative column offset, peak, row sigma, column sigma)
    const PARTS: [(f64, f64, f64, f64, f64); 6] = [
        (1.5, 0.0, 500.0, 1.0, 0.9),
        (5.0, 0.0, 1100.0, 1.8, 1.6),
        (9.5, 0.0, 1300.0, 1.3, 1.5),
        (13.0, -1.0, 600.0, 2.0, 0.7),
        (13.0, 1.0, 600.0, 2.0, 0.7),
        (16.5, 0.0, 350.0, 1.0, 1.6),
    ];
    let mut m = [0.0; PSM_FRAME_LEN];
    for r in 0..PSM_ROWS {
        for c in 0..PSM_COLS {
            let mut v = 0.0;
            for &(pr, pc, peak, sr, sc) in &PARTS {
                let dr = (r as f64 - pr) / sr;
                let dc = (c as f64 - (center + pc * spread)) / (sc * spread);
                v += peak * libm::exp(-0.5 * (dr * dr + dc * dc));
            }
            m[r * PSM_COLS + c] = weight * v;
        }
    }
    m
}

/// Lying posture: supine, left side or right side.
#[derive(Debug, Clone, Copy)]
struct Posture {
    center: f64,
    spread: f64,
}

fn random_posture<R: Rng>(rng: &mut R) -> Posture {
    match rng.random_range(0..3) {
        0 => Posture { center: 3.5, spread: 1.0 },
        1 => Posture { center: 2.3, spread: 0.7 },
        _ => Posture { center: 4.7, spread: 0.7 },
    }
}

fn synth_psm_epoch<R: Rng>(
    sig: &PsmSignature,
    noise_level: f64,
    posture: &mut Posture,
    weight: f64,
    breath_phase: &mut f64,
    rng: &mut R,
    out: &mut Vec<f32>,
) {
    let mut bursts = Vec::new();
    if rng.random::<f64>() < sig.posture_shift_prob {
        *posture = random_posture(rng);
        bursts.push((0usize, rng.random_range(10..30usize)));
    }
    for sec in 0..EPOCH_SECONDS {
        if rng.random::<f64>() < sig.burst_rate / EPOCH_SECONDS as f64 {
            let start = sec * PSM_RATE_HZ as usize + rng.random_range(0..PSM_RATE_HZ as usize);
            bursts.push((start, rng.random_range(10..30usize)));
        }
    }
    let base = body_map(posture.center, posture.spread, weight);
    let sd = noise_level * PSM_NOISE_COUNTS;
    let dphase = 2.0 * PI * sig.breathing_hz / f64::from(PSM_RATE_HZ);
    for f in 0..PSM_FRAMES_PER_EPOCH {
        *breath_phase += dphase;
        let moving = bursts.iter().any(|&(s, d)| f >= s && f < s + d);
        let frame = if moving {
            let shift = rng.random_range(-2.0..2.0);
            let m = body_map(posture.center + shift, posture.spread, weight * rng.random_range(0.4..0.9));
            (m, 120.0)
        } else {
            (base, 0.0)
        };
        let breath = sig.breathing_depth * libm::sin(*breath_phase);
        for r in 0..PSM_ROWS {
            let torso = if (3..=11).contains(&r) { 1.0 + breath } else { 1.0 };
            for c in 0..PSM_COLS {
                let mut v = frame.0[r * PSM_COLS + c] * torso + (sd + frame.1) * normal(rng);
                v = v.clamp(0.0, f64::from(PSM_MAX_COUNT));
                out.push(libm::round(v) as f32);
            }
        }
    }
}

/// One synthetic night of `n_epochs` epochs. `stages` fixes the sequence;
/// otherwise it is drawn from the profile's stage model. The same profile,
/// id, rate and seed always give the same bits.
pub fn generate_patient(
    profile: &SynthProfile,
    patient_id: &str,
    n_epochs: usize,
    eog_rate_hz: u32,
    stages: Option<&[SleepStage]>,
) -> Result<PatientRecording, SynthError> {
    if n_epochs == 0 {
        return Err(SynthError::NoEpochs);
    }
    if !EOG_RATES_HZ.contains(&eog_rate_hz) {
        return Err(SynthError::Rate(eog_rate_hz));
    }
    profile.validate(eog_rate_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let sequence = match stages {
        Some(s) if s.len() != n_epochs => {
            return Err(SynthError::SequenceLength {
                expected: n_epochs,
                found: s.len(),
            })
        }
        Some(s) => s.to_vec(),
        None => sample_stages(profile, n_epochs, &mut rng),
    };

    let samples = n_epochs * EPOCH_SECONDS * eog_rate_hz as usize;
    let mut eog_left = Vec::with_capacity(samples);
    let mut eog_right = Vec::with_capacity(samples);
    let mut psm_frames = Vec::with_capacity(n_epochs * PSM_FRAMES_PER_EPOCH * PSM_FRAME_LEN);
    let offset = rng.random_range(-300.0..300.0);
    let weight = rng.random_range(0.8..1.2);
    let mut posture = random_posture(&mut rng);
    let mut breath_phase = rng.random_range(0.0..2.0 * PI);
    for &stage in &sequence {
        let i = stage.code() as usize;
        synth_eog_epoch(
            &profile.eog[i],
            profile.noise_level,
            eog_rate_hz,
            offset,
            &mut rng,
            &mut eog_left,
            &mut eog_right,
        );
        synth_psm_epoch(
            &profile.psm[i],
            profile.noise_level,
            &mut posture,
            weight,
            &mut breath_phase,
            &mut rng,
            &mut psm_frames,
        );
    }
    Ok(PatientRecording {
        patient_id: patient_id.into(),
        eog_left,
        eog_right,
        eog_rate_hz,
        psm_frames,
        psm_rate_hz: PSM_RATE_HZ,
        labels: sequence.into_iter().map(Some).collect(),
    })
}

/// Default cohort rate mix, 250 Hz to 512 Hz patients.
pub const DEFAULT_RATE_MIX: (u32, u32) = (74, 11);

/// Native EOG rate of each patient in a cohort of `n`. The 512 Hz share is
/// `round(n * b / (a + b))`, spread evenly and ending on the last patient.
pub fn cohort_rates(n: usize, mix: (u32, u32)) -> Vec<u32> {
    let total = u64::from(mix.0) + u64::from(mix.1);
    let high = if total == 0 {
        0
    } else {
        ((n as u64 * u64::from(mix.1) * 2 + total) / (2 * total)) as usize
    };
    (0..n)
        .map(|i| {
            if (i + 1) * high / n.max(1) != i * high / n.max(1) {
                512
            } else {
                250
            }
        })
        .collect()
}

/// SplitMix64 of `(base, index)`, used to give every patient its own seed.
pub fn patient_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Zero-padded id of cohort member `index`.
pub fn patient_id(index: usize) -> String {
    format!("P{index:03}")
}
