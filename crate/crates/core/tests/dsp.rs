use std::f64::consts::PI;

use neurocam::dsp::{
    default_freqs, default_n_cycles, design_bandpass, epoch_windows, epochs_from_recording,
    filter_zero_phase, morlet_tfr, zscore_normalize, DspError, Epoch, EpochProvenance, EpochSet,
};
use neurocam::edf::{ClassLabel, Recording, Trial};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 160.0;

fn sine(freq: f64, seconds: f64) -> Vec<f64> {
    let n = (seconds * FS) as usize;
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
        .collect()
}

/// Peak absolute value over the central part of a signal.
fn central_amplitude(x: &[f64], skip: usize) -> f64 {
    x[skip..x.len() - skip]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Closed-form magnitude of a bilinear-transformed Butterworth band-pass.
fn butterworth_band_gain(f: f64, low: f64, high: f64, fs: f64, order: i32) -> f64 {
    let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
    let (w1, w2, w) = (warp(low), warp(high), warp(f));
    let w0sq = w1 * w2;
    let ratio = (w * w - w0sq) / (w * (w2 - w1));
    1.0 / (1.0 + ratio.powi(2 * order)).sqrt()
}

/// Least-squares amplitude of a sinusoid at `freq` over the central part.
fn fitted_amplitude(x: &[f64], freq: f64, skip: usize) -> f64 {
    let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate().take(x.len() - skip).skip(skip) {
        let ph = 2.0 * PI * freq * i as f64 / FS;
        let (s, c) = ph.sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    let a = (xs * cc - xc * sc) / det;
    let b = (xc * ss - xs * sc) / det;
    a.hypot(b)
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

#[test]
fn design_matches_closed_form_magnitude() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    assert_eq!(spec.sections.len(), 4);
    assert!(spec.max_pole_radius() < 1.0);
    let (b, a) = (spec.numerator(), spec.denominator());
    assert_eq!(b.len(), 9);
    for i in 1..80 {
        let f = i as f64;
        let want = butterworth_band_gain(f, 8.0, 30.0, FS, 4);
        // Evaluate the expanded polynomials directly as a second path.
        let z = num_complex::Complex64::from_polar(1.0, -2.0 * PI * f / FS);
        let eval = |p: &[f64]| {
            p.iter()
                .rev()
                .fold(num_complex::Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
        };
        let poly = (eval(&b) / eval(&a)).norm();
        assert!((spec.response(f).norm() - want).abs() < 1e-9, "{f} Hz");
        assert!((poly - want).abs() < 1e-8, "{f} Hz poly");
    }
    assert!(db(spec.response(15.5).norm()).abs() < 1.0);
    assert!(db(spec.response(240f64.sqrt()).norm()).abs() < 1e-9);
}

#[test]
fn design_rejects_bad_bands() {
    assert!(matches!(
        design_bandpass(30.0, 8.0, FS, 4),
        Err(DspError::InvalidBand { .. })
    ));
    assert!(matches!(
        design_bandpass(8.0, 80.0, FS, 4),
        Err(DspError::InvalidBand { .. })
    ));
    assert!(matches!(
        design_bandpass(0.0, 30.0, FS, 4),
        Err(DspError::InvalidBand { .. })
    ));
    assert!(design_bandpass(8.0, 30.0, FS, 0).is_err());
}

#[test]
fn odd_orders_and_wide_bands_are_stable() {
    for order in 1..=8 {
        for (lo, hi) in [(8.0, 30.0), (0.5, 70.0), (1.0, 2.0)] {
            let spec = design_bandpass(lo, hi, FS, order).unwrap();
            assert!(spec.max_pole_radius() < 1.0);
            let mid = (lo * hi).sqrt();
            let want = butterworth_band_gain(mid, lo, hi, FS, order as i32);
            assert!((spec.response(mid).norm() - want).abs() < 1e-9);
        }
    }
}

#[test]
fn dc_is_removed() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    let y = filter_zero_phase(&spec, &vec![1.0; 1600]).unwrap();
    assert!(
        y.iter().all(|v| v.abs() < 1e-3),
        "max {}",
        central_amplitude(&y, 0)
    );
}

#[test]
fn passband_and_stopband_amplitudes() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    let skip = FS as usize;
    let y15 = filter_zero_phase(&spec, &sine(15.0, 10.0)).unwrap();
    let a15 = fitted_amplitude(&y15, 15.0, skip);
    let expected = spec.response(15.0).norm().powi(2);
    assert!((0.89..=1.0).contains(&a15), "15 Hz amplitude {a15}");
    assert!((a15 - expected).abs() < 1e-6, "{a15} vs |H|^2 = {expected}");
    assert!(db(a15).abs() <= 1.0);

    for f in [2.0, 50.0] {
        let y = filter_zero_phase(&spec, &sine(f, 10.0)).unwrap();
        let a = central_amplitude(&y, skip);
        assert!(a <= 0.1, "{f} Hz amplitude {a}");
        assert!(db(a) <= -20.0);
    }
}

#[test]
fn zero_signal_and_short_signal() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    assert!(filter_zero_phase(&spec, &[0.0; 100])
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
    assert!(matches!(
        filter_zero_phase(&spec, &[1.0; 27]),
        Err(DspError::TooShort {
            len: 27,
            needed: 28
        })
    ));
    assert_eq!(filter_zero_phase(&spec, &[1.0; 28]).unwrap().len(), 28);
}

#[test]
fn filtering_is_linear() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let x: Vec<f64> = (0..800).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..800).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = filter_zero_phase(&spec, &x).unwrap();
        let fy = filter_zero_phase(&spec, &y).unwrap();
        let fm = filter_zero_phase(&spec, &mix).unwrap();
        let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..800 {
            assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn filtering_has_zero_phase() {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let raw: Vec<f64> = (0..1600).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Band-limit first so the comparison is between in-band signals.
    let x = filter_zero_phase(&spec, &raw).unwrap();
    let y = filter_zero_phase(&spec, &x).unwrap();
    let xcorr = |lag: isize| -> f64 {
        (200..1400)
            .map(|i| x[i] * y[(i as isize + lag) as usize])
            .sum()
    };
    let best = (-20..=20)
        .max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b)))
        .unwrap();
    assert_eq!(best, 0);
}

fn trial(onset: usize, len: usize, label: ClassLabel, index: usize) -> Trial {
    Trial {
        subject_id: 42,
        run_id: 4,
        index,
        onset_sample: onset,
        length_samples: len,
        class_label: label,
        truncated: false,
    }
}

fn ramp_recording(n_ch: usize, n: usize) -> Recording {
    let labels = (0..n_ch).map(|c| format!("C{c}")).collect();
    let samples = (0..n_ch)
        .map(|c| (0..n).map(|i| (c * 100_000 + i) as f64).collect())
        .collect();
    Recording::new(FS, labels, samples)
}

#[test]
fn four_second_trial_gives_four_epochs() {
    let rec = ramp_recording(3, 2000);
    let eps = epoch_windows(&trial(100, 640, ClassLabel::Right, 0), &rec, 1.0);
    assert_eq!(eps.len(), 4);
    for (w, e) in eps.iter().enumerate() {
        assert_eq!(e.data.len(), 3 * 160);
        assert_eq!(e.label, ClassLabel::Right);
        assert_eq!(e.provenance.window, w);
        // Channel-major layout, consecutive windows.
        assert_eq!(e.data[0], (100 + w * 160) as f64);
        assert_eq!(e.data[160], (100_000 + 100 + w * 160) as f64);
    }
    // The dataset's 4.1 s trials also give four windows.
    assert_eq!(
        epoch_windows(&trial(0, 656, ClassLabel::Left, 0), &rec, 1.0).len(),
        4
    );
}

#[test]
fn short_trial_gives_no_epochs() {
    let rec = ramp_recording(1, 1000);
    assert!(epoch_windows(&trial(0, 80, ClassLabel::Left, 0), &rec, 1.0).is_empty());
}

#[test]
fn epoch_count_identity() {
    let rec = ramp_recording(2, 93 * 700);
    let trials: Vec<Trial> = (0..93)
        .map(|i| {
            let label = if i % 2 == 0 {
                ClassLabel::Left
            } else {
                ClassLabel::Right
            };
            trial(i * 700, 640, label, i)
        })
        .collect();
    let set = epochs_from_recording(&rec, &trials, 1.0).unwrap();
    assert_eq!(set.len(), 372);
    assert_eq!(set.n_times, 160);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials: Vec<Trial> = (0..40)
        .map(|i| trial(i * 700, rng.random_range(0..700), ClassLabel::Left, i))
        .collect();
    let expected: usize = trials
        .iter()
        .map(|t| (t.length_samples as f64 / FS).floor() as usize)
        .sum();
    assert_eq!(
        epochs_from_recording(&rec, &trials, 1.0).unwrap().len(),
        expected
    );
}

fn random_set(seed: u64, n: usize, n_ch: usize, offset: f64) -> EpochSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let epochs = (0..n)
        .map(|i| Epoch {
            data: (0..n_ch * 20)
                .map(|k| offset * (k / 20) as f64 + rng.random_range(-5.0..5.0))
                .collect(),
            label: if i % 2 == 0 {
                ClassLabel::Left
            } else {
                ClassLabel::Right
            },
            provenance: EpochProvenance {
                subject: 1,
                run: 3,
                trial: i / 4,
                window: i % 4,
            },
        })
        .collect();
    EpochSet::from_epochs(epochs, (0..n_ch).map(|c| format!("C{c}")).collect(), 20, FS).unwrap()
}

fn channel_moments(set: &EpochSet, c: usize) -> (f64, f64) {
    let vals: Vec<f64> = (0..set.len())
        .flat_map(|e| set.epoch(e)[c * set.n_times..(c + 1) * set.n_times].to_vec())
        .collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    let s = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
    (m, s)
}

#[test]
fn self_normalization_gives_unit_moments() {
    let set = random_set(4, 30, 5, 10.0);
    let (out, stats) = zscore_normalize(&set, None).unwrap();
    assert!(stats.flat.iter().all(|f| !f));
    for c in 0..5 {
        let (m, s) = channel_moments(&out, c);
        assert!(
            m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6,
            "channel {c}: {m} {s}"
        );
    }
}

#[test]
fn constant_channel_is_flagged() {
    let mut set = random_set(5, 6, 2, 0.0);
    for e in 0..6 {
        let l = set.epoch_len();
        for v in &mut set.data[e * l..e * l + 20] {
            *v = 7.5;
        }
    }
    let (out, stats) = zscore_normalize(&set, None).unwrap();
    assert_eq!(stats.flat, vec![true, false]);
    assert!((0..6).all(|e| out.epoch(e)[..20].iter().all(|&v| v == 0.0)));
}

#[test]
fn test_set_uses_training_statistics() {
    let train = random_set(6, 40, 3, 1.0);
    let test = random_set(7, 40, 3, 4.0);
    let (_, stats) = zscore_normalize(&train, None).unwrap();
    let (normed, applied) = zscore_normalize(&test, Some(&stats)).unwrap();
    assert_eq!(applied, stats);
    let (m, _) = channel_moments(&normed, 2);
    assert!(m.abs() > 0.1, "test mean {m} should not be re-centred");
    let (_, wrong) = zscore_normalize(&random_set(1, 2, 2, 0.0), None).unwrap();
    assert!(matches!(
        zscore_normalize(&test, Some(&wrong)),
        Err(DspError::ChannelMismatch(_))
    ));
}

#[test]
fn epoch_container_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let set = random_set(8, 9, 4, 1.0);
    let path = dir.path().join("epochs.bin");
    set.save(&path).unwrap();
    assert!(path.with_extension("json").exists());
    assert_eq!(EpochSet::load(&path).unwrap(), set);

    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(EpochSet::load(&path), Err(DspError::Format(_))));
}

#[test]
fn morlet_peak_matches_tone() {
    let freqs = default_freqs();
    let cycles = default_n_cycles(&freqs);
    for tone in [10.0, 12.0, 20.0, 28.0] {
        let tfr = morlet_tfr(&sine(tone, 1.0), FS, &freqs, &cycles).unwrap();
        assert!(tfr.skipped.is_empty());
        // Brute-force argmax over the grid.
        let mp = tfr.mean_power();
        let mut best = 0;
        for i in 0..mp.len() {
            if mp[i] > mp[best] {
                best = i;
            }
        }
        assert_eq!(tfr.peak_frequency(), Some(tfr.freqs[best]));
        assert!(
            (tfr.freqs[best] - tone).abs() <= 1.0,
            "{tone} Hz -> {}",
            tfr.freqs[best]
        );
        assert!(tfr.power.iter().flatten().all(|&p| p >= 0.0));
        assert_eq!(tfr.power.len(), tfr.freqs.len());
        assert!(tfr.power.iter().all(|r| r.len() == tfr.times.len()));
    }
}

#[test]
fn morlet_power_is_flat_in_the_centre() {
    let tfr = morlet_tfr(&sine(12.0, 2.0), FS, &[12.0], &[6.0]).unwrap();
    let row = &tfr.power[0];
    let centre = &row[100..220];
    let (lo, hi) = centre
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(hi / lo < 1.01, "{lo}..{hi}");
}

#[test]
fn morlet_zero_signal() {
    let freqs = default_freqs();
    let tfr = morlet_tfr(&[0.0; 160], FS, &freqs, &default_n_cycles(&freqs)).unwrap();
    assert!(tfr.power.iter().flatten().all(|&p| p == 0.0));
}

#[test]
fn morlet_separates_two_tones() {
    let x: Vec<f64> = sine(10.0, 1.0)
        .iter()
        .zip(sine(25.0, 1.0))
        .map(|(a, b)| a + b)
        .collect();
    let freqs = default_freqs();
    let mp = morlet_tfr(&x, FS, &freqs, &default_n_cycles(&freqs))
        .unwrap()
        .mean_power();
    let local_max: Vec<f64> = (1..mp.len() - 1)
        .filter(|&i| mp[i] > mp[i - 1] && mp[i] > mp[i + 1])
        .map(|i| freqs[i])
        .collect();
    assert_eq!(local_max, vec![10.0, 25.0]);
}

#[test]
fn morlet_ridge_follows_time_shift() {
    let burst = |start: usize| -> Vec<f64> {
        (0..320)
            .map(|i| {
                let t = (i as f64 - start as f64 - 20.0) / FS;
                (-t * t / (2.0 * 0.05f64.powi(2))).exp() * (2.0 * PI * 15.0 * t).cos()
            })
            .collect()
    };
    let ridge = |x: &[f64]| {
        let p = &morlet_tfr(x, FS, &[15.0], &[7.5]).unwrap().power[0];
        (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
    };
    let base = ridge(&burst(100));
    for delta in [1, 7, 40] {
        assert_eq!(ridge(&burst(100 + delta)), base + delta);
    }
}

#[test]
fn long_wavelets_are_skipped() {
    let tfr = morlet_tfr(&[1.0; 40], FS, &[8.0, 30.0], &[4.0, 3.0]).unwrap();
    assert_eq!(tfr.skipped, vec![8.0]);
    assert_eq!(tfr.freqs, vec![30.0]);
    assert!(morlet_tfr(&[1.0; 40], FS, &[90.0], &[4.0]).is_err());
}
