//! Two-class synthetic EEG with planted contralateral mu desynchronization.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::MontageLayout;
use crate::dsp::{EpochProvenance, EpochSet};
use crate::edf::ClassLabel;
use crate::tensor::RngState;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("ERD channel `{0}` is not among the generated channels")]
    UnknownChannel(String),
    #[error("serialization failed: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_trials_per_class: usize,
    pub fs: f64,
    /// Samples per epoch (one epoch per trial).
    pub n_times: usize,
    /// Leading channels of the bundled montage.
    pub n_channels: usize,
    pub mu_freq: f64,
    pub mu_amplitude: f64,
    pub erd_depth: f64,
    /// Channels desynchronized during left-class trials (contralateral).
    pub erd_channels_left_class: Vec<String>,
    pub erd_channels_right_class: Vec<String>,
    /// Scale of the 1/f background.
    pub noise_sigma: f64,
    pub subject_id: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_trials_per_class: 200,
            fs: 160.0,
            n_times: 160,
            n_channels: 64,
            mu_freq: 11.0,
            mu_amplitude: 1.0,
            erd_depth: 0.5,
            erd_channels_left_class: vec!["C4".into(), "CP4".into()],
            erd_channels_right_class: vec!["C3".into(), "CP3".into()],
            noise_sigma: 0.5,
            subject_id: 0,
            seed: 0,
        }
    }
}

/// What was planted, written next to the generated epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub erd_channels_left_class: Vec<String>,
    pub erd_channels_right_class: Vec<String>,
    pub mu_freq: f64,
    pub erd_depth: f64,
    pub n_trials_per_class: usize,
    pub seed: u64,
}

impl GroundTruth {
    pub fn erd_channels(&self, class: ClassLabel) -> &[String] {
        match class {
            ClassLabel::Left => &self.erd_channels_left_class,
            ClassLabel::Right => &self.erd_channels_right_class,
        }
    }

    /// Union of both classes' planted channels, left class first.
    pub fn all_erd_channels(&self) -> Vec<String> {
        let mut v = self.erd_channels_left_class.clone();
        for c in &self.erd_channels_right_class {
            if !v.contains(c) {
                v.push(c.clone());
            }
        }
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| SynthError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SynthError::Format(e.to_string()))
    }
}

// Background bank: one damped burst per frequency, amplitude ∝ f^(-1/2)
// so that power falls as 1/f.
const BANK_FREQS: std::ops::RangeInclusive<u32> = 1..=40;

impl SynthSpec {
    pub fn validate(&self, labels: &[String]) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_trials_per_class == 0 || self.n_times == 0 || self.n_channels == 0 {
            return bad("trial, sample and channel counts must be positive".into());
        }
        if !(self.fs > 0.0) || !(self.mu_freq > 0.0 && self.mu_freq < self.fs / 2.0) {
            return bad(format!("mu frequency {} at {} Hz", self.mu_freq, self.fs));
        }
        if !(0.0..=1.0).contains(&self.erd_depth) {
            return bad(format!("erd_depth {}", self.erd_depth));
        }
        if !(self.noise_sigma >= 0.0) || !(self.mu_amplitude >= 0.0) {
            return bad("amplitudes must be non-negative".into());
        }
        for c in self
            .erd_channels_left_class
            .iter()
            .chain(&self.erd_channels_right_class)
        {
            if !labels.contains(c) {
                return Err(SynthError::UnknownChannel(c.clone()));
            }
        }
        Ok(())
    }

    fn trial(&self, index: usize, erd_rows: &[bool]) -> Vec<f64> {
        let mut rng = RngState::new(self.seed).derive(index as u64).rng();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let (n, fs) = (self.n_times, self.fs);
        let duration = n as f64 / fs;
        let mut data = vec![0.0; self.n_channels * n];
        for (c, row) in data.chunks_exact_mut(n).enumerate() {
            for f in BANK_FREQS {
                let f = f as f64;
                let amp = self.noise_sigma * (2.0 / f).sqrt() * normal.sample(&mut rng);
                let onset = rng.random_range(-0.5 * duration..duration);
                let tau = rng.random_range(0.1..0.5);
                let phase = rng.random_range(0.0..2.0 * PI);
                // amp·e^(−dt/τ)·sin(2πf·dt + φ) for dt ≥ 0, by complex recurrence
                let first = ((onset * fs).ceil().max(0.0) as usize).min(n);
                let dt0 = first as f64 / fs - onset;
                let mut z =
                    Complex64::from_polar(amp * (-dt0 / tau).exp(), 2.0 * PI * f * dt0 + phase);
                let step = Complex64::new(-1.0 / tau, 2.0 * PI * f)
                    .scale(1.0 / fs)
                    .exp();
                for v in &mut row[first..] {
                    *v += z.im;
                    z *= step;
                }
            }
            let gain = if erd_rows[c] {
                1.0 - self.erd_depth
            } else {
                1.0
            };
            let amp = self.mu_amplitude * gain * (1.0 + 0.1 * normal.sample(&mut rng)).max(0.0);
            let freq = self.mu_freq + rng.random_range(-1.5..1.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            for (i, v) in row.iter_mut().enumerate() {
                *v += amp * (2.0 * PI * freq * i as f64 / fs + phase).sin()
                    + 0.1 * self.noise_sigma * normal.sample(&mut rng);
            }
        }
        data
    }
}

/// Balanced epochs (alternating Left, Right) with one 1-trial epoch each,
/// plus the planted ground truth. Trial `i` draws from its own stream, so
/// generation is order-independent and parallel.
pub fn generate(spec: &SynthSpec) -> Result<(EpochSet, GroundTruth)> {
    let montage = MontageLayout::bundled();
    if spec.n_channels > montage.len() {
        return Err(SynthError::InvalidSpec(format!(
            "{} channels requested, montage has {}",
            spec.n_channels,
            montage.len()
        )));
    }
    let labels: Vec<String> = montage.labels().into_iter().take(spec.n_channels).collect();
    spec.validate(&labels)?;
    let rows =
        |planted: &[String]| -> Vec<bool> { labels.iter().map(|l| planted.contains(l)).collect() };
    let erd = [
        rows(&spec.erd_channels_left_class),
        rows(&spec.erd_channels_right_class),
    ];

    let total = 2 * spec.n_trials_per_class;
    let class_of = |i: usize| ClassLabel::ALL[i % 2];
    let trials: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| spec.trial(i, &erd[class_of(i).index()]))
        .collect();

    let mut set = EpochSet::empty(labels, spec.n_times, spec.fs);
    for (i, data) in trials.into_iter().enumerate() {
        set.data.extend(data);
        set.labels.push(class_of(i));
        set.provenance.push(EpochProvenance {
            subject: spec.subject_id,
            run: 0,
            trial: i,
            window: 0,
        });
    }
    let truth = GroundTruth {
        erd_channels_left_class: spec.erd_channels_left_class.clone(),
        erd_channels_right_class: spec.erd_channels_right_class.clone(),
        mu_freq: spec.mu_freq,
        erd_depth: spec.erd_depth,
        n_trials_per_class: spec.n_trials_per_class,
        seed: spec.seed,
    };
    Ok((set, truth))
}
