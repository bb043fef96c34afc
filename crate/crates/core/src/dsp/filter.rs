use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DspError;
use crate::edf::Recording;

/// One second-order section `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 6];

/// Digital Butterworth band-pass filter as a cascade of biquads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub low_cut: f64,
    pub high_cut: f64,
    /// Order of the low-pass prototype; the band-pass has twice as many poles.
    pub order: usize,
    pub sampling_rate: f64,
    pub sections: Vec<Section>,
}

fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

fn section_response(s: &Section, z: Complex64) -> Complex64 {
    let zi = z.inv();
    let num = s[0] + zi * (s[1] + zi * s[2]);
    let den = s[3] + zi * (s[4] + zi * s[5]);
    num / den
}

impl FilterSpec {
    /// Expanded transfer-function numerator (descending powers of z⁻¹).
    pub fn numerator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s[..3]))
    }

    pub fn denominator(&self) -> Vec<f64> {
        self.sections
            .iter()
            .fold(vec![1.0], |acc, s| poly_mul(&acc, &s[3..]))
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / self.sampling_rate);
        self.sections
            .iter()
            .map(|s| section_response(s, z))
            .product()
    }

    /// Largest pole modulus over all sections.
    pub fn max_pole_radius(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| {
                let disc = Complex64::new(s[4] * s[4] - 4.0 * s[5], 0.0).sqrt();
                [(-s[4] + disc) / 2.0, (-s[4] - disc) / 2.0]
            })
            .map(|p| p.norm())
            .fold(0.0, f64::max)
    }

    /// Edge padding used by [`filter_zero_phase`]: three times the number of
    /// coefficients per direction of a full cascade, `3·(2·sections + 1)`.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }
}

/// Designs a Butterworth band-pass of prototype order `order` by bilinear
/// transform with pre-warped band edges.
pub fn design_bandpass(low: f64, high: f64, fs: f64, order: usize) -> Result<FilterSpec, DspError> {
    if !(fs > 0.0) || !(low > 0.0) || !(low < high) || !(high < fs / 2.0) {
        return Err(DspError::InvalidBand { low, high, fs });
    }
    if order == 0 {
        return Err(DspError::InvalidArgument(
            "filter order must be at least 1".into(),
        ));
    }
    let w1 = 2.0 * fs * (PI * low / fs).tan();
    let w2 = 2.0 * fs * (PI * high / fs).tan();
    let w0 = (w1 * w2).sqrt();
    let bw = w2 - w1;
    let fs2 = Complex64::new(2.0 * fs, 0.0);
    let center = Complex64::from_polar(1.0, 2.0 * (w0 / (2.0 * fs)).atan());

    let mut complex = Vec::with_capacity(order);
    let mut real = Vec::new();
    for k in 0..order {
        let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
        let half = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let root = (half * half - w0 * w0).sqrt();
        for s in [half + root, half - root] {
            let z = (fs2 + s) / (fs2 - s);
            if z.im.abs() <= 1e-12 * z.norm().max(1.0) {
                real.push(z.re);
            } else if z.im > 0.0 {
                // The conjugate partner shares this section.
                complex.push([-2.0 * z.re, z.norm_sqr()]);
            }
        }
    }
    real.sort_by(f64::total_cmp);
    let denominators = complex
        .into_iter()
        .chain(real.chunks(2).map(|p| [-(p[0] + p[1]), p[0] * p[1]]));
    let mut sections = Vec::with_capacity(order);
    for [a1, a2] in denominators {
        let mut sec = [1.0, 0.0, -1.0, 1.0, a1, a2];
        let g = section_response(&sec, center).norm();
        for c in &mut sec[..3] {
            *c /= g;
        }
        sections.push(sec);
    }
    if sections.len() != order || real.len() % 2 != 0 {
        return Err(DspError::Unstable(format!(
            "could not pair {} poles into {order} sections",
            2 * order
        )));
    }
    let spec = FilterSpec {
        low_cut: low,
        high_cut: high,
        order,
        sampling_rate: fs,
        sections,
    };
    let r = spec.max_pole_radius();
    if !(r < 1.0) {
        return Err(DspError::Unstable(format!("pole radius {r}")));
    }
    Ok(spec)
}

/// Steady-state section states for a unit step, scaled through the cascade.
fn step_states(sections: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sections
        .iter()
        .map(|s| {
            let gain = (s[0] + s[1] + s[2]) / (s[3] + s[4] + s[5]);
            let z1 = gain - s[0];
            let z2 = s[2] - s[5] * gain;
            let zi = [z1 * scale, z2 * scale];
            scale *= gain;
            zi
        })
        .collect()
}

/// Direct-form II transposed cascade, in place.
fn sos_filter(sections: &[Section], x: &mut [f64], init: &[[f64; 2]], x0: f64) {
    for (s, zi) in sections.iter().zip(init) {
        let (mut z1, mut z2) = (zi[0] * x0, zi[1] * x0);
        let [b0, b1, b2, _, a1, a2] = *s;
        for v in x.iter_mut() {
            let xin = *v;
            let y = b0 * xin + z1;
            z1 = b1 * xin - a1 * y + z2;
            z2 = b2 * xin - a2 * y;
            *v = y;
        }
    }
}

/// Forward-backward filtering with odd reflection padding and steady-state
/// initial conditions. Output length equals input length.
pub fn filter_zero_phase(spec: &FilterSpec, signal: &[f64]) -> Result<Vec<f64>, DspError> {
    let pad = spec.pad_len();
    let n = signal.len();
    if n <= pad {
        return Err(DspError::TooShort {
            len: n,
            needed: pad + 1,
        });
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let first = signal[0];
    let last = signal[n - 1];
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    let zi = step_states(&spec.sections);
    let x0 = ext[0];
    sos_filter(&spec.sections, &mut ext, &zi, x0);
    ext.reverse();
    let x0 = ext[0];
    sos_filter(&spec.sections, &mut ext, &zi, x0);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Filters every channel of a continuous recording.
pub fn filter_recording(spec: &FilterSpec, rec: &Recording) -> Result<Recording, DspError> {
    if (rec.sampling_rate - spec.sampling_rate).abs() > 1e-9 {
        return Err(DspError::InvalidArgument(format!(
            "filter designed for {} Hz applied to a {} Hz recording",
            spec.sampling_rate, rec.sampling_rate
        )));
    }
    let samples = rec
        .samples
        .par_iter()
        .map(|row| filter_zero_phase(spec, row))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Recording {
        samples,
        ..rec.clone()
    })
}
