//! Separability of the synthetic generator checked with an independent
//! nearest-centroid classifier over per-mel band energies.

use proptest::prelude::*;
use sleepfuse_core::dsp::{LogMelExtractor, MelConfig};
use sleepfuse_core::ingest::segment_epochs;
use sleepfuse_core::stage::STAGE_COUNT;
use sleepfuse_core::synth::{generate_patient, SynthProfile};

/// Mel filters centred above this sit in the 250 Hz anti-alias transition
/// band and are left out.
const BAND_LIMIT_HZ: f64 = 100.0;

/// Mean log-mel energy per (channel, mel) over the epoch, for mel filters
/// centred inside the EOG band.
fn band_energies(ex: &mut LogMelExtractor, profile: &SynthProfile, n: usize, rate: u32) -> Vec<(Vec<f64>, usize)> {
    let in_band: Vec<bool> = ex.filterbank().centers_hz().iter().map(|&c| c < BAND_LIMIT_HZ).collect();
    let rec = generate_patient(profile, "p", n, rate, None).unwrap();
    segment_epochs(&rec)
        .unwrap()
        .epochs
        .iter()
        .map(|e| {
            let spec = ex.compute(&[&e.eog[0], &e.eog[1]], e.native_eog_rate_hz).unwrap();
            let rows = spec.values.chunks_exact(spec.n_frames).enumerate();
            let f = rows
                .filter(|(i, _)| in_band[i % spec.n_mels])
                .map(|(_, r)| r)
                .map(|r| r.iter().map(|&v| f64::from(v)).sum::<f64>() / r.len() as f64).collect();
            (f, e.label.code() as usize)
        })
        .collect()
}

fn nearest_centroid_accuracy(noise: f64) -> f64 {
    let mut ex = LogMelExtractor::new(MelConfig::default()).unwrap();
    let base = SynthProfile::default().with_uniform_priors().with_noise(noise);
    let mut iid = base.clone();
    iid.iid_stages = true;
    let train = band_energies(&mut ex, &iid.clone().with_seed(1), 50, 250);
    let test = band_energies(&mut ex, &iid.with_seed(2), 50, 512);

    let dim = train[0].0.len();
    let mut sums = vec![vec![0.0; dim]; STAGE_COUNT];
    let mut counts = [0usize; STAGE_COUNT];
    for (f, y) in &train {
        counts[*y] += 1;
        sums[*y].iter_mut().zip(f).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|(f, y)| {
            let dist = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..STAGE_COUNT)
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| dist(&sums[a]).total_cmp(&dist(&sums[b])))
                .unwrap();
            best == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

#[test]
fn noiseless_stages_are_recovered_by_nearest_centroid() {
    let acc = nearest_centroid_accuracy(0.0);
    assert!(acc >= 0.99, "accuracy {acc}");
}

#[test]
fn nearest_centroid_degrades_with_noise() {
    let levels = [0.0, 4.0, 6.0, 8.0, 16.0];
    let accs: Vec<f64> = levels.iter().map(|&n| nearest_centroid_accuracy(n)).collect();
    for w in accs.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "not monotone: {accs:?}");
    }
    assert!(accs[4] < accs[0] - 0.3, "noise had little effect: {accs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_nights_satisfy_ingest_invariants(
        seed in any::<u64>(),
        n in 1usize..6,
        high in any::<bool>(),
        noise in 0.0f64..20.0,
        complementary in any::<bool>(),
    ) {
        let base = if complementary { SynthProfile::complementary() } else { SynthProfile::default() };
        let rate = if high { 512 } else { 250 };
        let rec = generate_patient(&base.with_noise(noise).with_seed(seed), "p", n, rate, None).unwrap();
        rec.validate().unwrap();
        let seg = segment_epochs(&rec).unwrap();
        prop_assert_eq!(seg.epochs.len(), n);
        prop_assert_eq!(seg.dropped, 0);
    }
}
