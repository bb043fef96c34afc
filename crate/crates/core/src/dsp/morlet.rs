use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// Time-frequency power of one channel, `power[f][t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tfr {
    pub channel: String,
    pub freqs: Vec<f64>,
    pub times: Vec<f64>,
    pub power: Vec<Vec<f64>>,
    /// Requested frequencies whose wavelet did not fit in the signal.
    pub skipped: Vec<f64>,
}

impl Tfr {
    /// Time-averaged power per frequency.
    pub fn mean_power(&self) -> Vec<f64> {
        self.power
            .iter()
            .map(|row| row.iter().sum::<f64>() / row.len().max(1) as f64)
            .collect()
    }

    /// Frequency with the largest time-averaged power.
    pub fn peak_frequency(&self) -> Option<f64> {
        let mp = self.mean_power();
        let i = (0..mp.len()).max_by(|&a, &b| mp[a].total_cmp(&mp[b]).then(b.cmp(&a)))?;
        Some(self.freqs[i])
    }
}

/// 8–30 Hz in 1 Hz steps.
pub fn default_freqs() -> Vec<f64> {
    (8..=30).map(f64::from).collect()
}

/// `f / 2` cycles per frequency.
pub fn default_n_cycles(freqs: &[f64]) -> Vec<f64> {
    freqs.iter().map(|f| f / 2.0).collect()
}

/// Complex Morlet wavelet sampled over ±5 standard deviations and scaled to
/// unit energy.
pub fn morlet_wavelet(freq: f64, n_cycles: f64, fs: f64) -> Vec<Complex64> {
    let sigma = n_cycles / (2.0 * PI * freq);
    let half = (5.0 * sigma * fs).floor() as i64;
    let mut w: Vec<Complex64> = (-half..=half)
        .map(|k| {
            let t = k as f64 / fs;
            Complex64::from_polar((-t * t / (2.0 * sigma * sigma)).exp(), 2.0 * PI * freq * t)
        })
        .collect();
    let norm = w.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    for c in &mut w {
        *c /= norm;
    }
    w
}

/// Power `|x ∗ ψ_f|²` for each frequency, with 'same'-length convolution
/// (zero outside the signal). Frequencies whose wavelet is longer than the
/// signal are skipped with a warning.
pub fn morlet_tfr(
    signal: &[f64],
    fs: f64,
    freqs: &[f64],
    n_cycles: &[f64],
) -> Result<Tfr, DspError> {
    if n_cycles.len() != freqs.len() {
        return Err(DspError::InvalidArgument(format!(
            "{} frequencies but {} cycle counts",
            freqs.len(),
            n_cycles.len()
        )));
    }
    if !(fs > 0.0) {
        return Err(DspError::InvalidArgument(format!("sampling rate {fs}")));
    }
    let n = signal.len();
    let mut tfr = Tfr {
        channel: String::new(),
        freqs: Vec::new(),
        times: (0..n).map(|i| i as f64 / fs).collect(),
        power: Vec::new(),
        skipped: Vec::new(),
    };
    for (&f, &nc) in freqs.iter().zip(n_cycles) {
        if !(f > 0.0 && f < fs / 2.0) {
            return Err(DspError::InvalidArgument(format!(
                "frequency {f} Hz outside (0, {})",
                fs / 2.0
            )));
        }
        if !(nc > 0.0) {
            return Err(DspError::InvalidArgument(format!(
                "n_cycles {nc} at {f} Hz"
            )));
        }
        let w = morlet_wavelet(f, nc, fs);
        if w.len() > n {
            log::warn!(
                "skipping {f} Hz: wavelet of {} samples exceeds signal of {n}",
                w.len()
            );
            tfr.skipped.push(f);
            continue;
        }
        let half = (w.len() / 2) as isize;
        let row = (0..n as isize)
            .map(|t| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (k, wk) in w.iter().enumerate() {
                    let idx = t + half - k as isize;
                    if (0..n as isize).contains(&idx) {
                        acc += wk * signal[idx as usize];
                    }
                }
                acc.norm_sqr()
            })
            .collect();
        tfr.freqs.push(f);
        tfr.power.push(row);
    }
    Ok(tfr)
}
