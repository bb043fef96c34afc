use serde::{Deserialize, Serialize};

use super::{DspError, EpochSet};

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose spread was zero; their divisor is replaced by 1.
    pub flat: Vec<bool>,
}

impl ChannelStats {
    pub fn flat_channels(&self) -> Vec<usize> {
        self.flat
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| i)
            .collect()
    }

    fn measure(set: &EpochSet) -> Self {
        let (c_n, t_n) = (set.n_channels, set.n_times);
        let count = (set.len() * t_n) as f64;
        let mut mean = vec![0.0; c_n];
        let mut m2 = vec![0.0; c_n];
        for e in 0..set.len() {
            let ep = set.epoch(e);
            for c in 0..c_n {
                mean[c] += ep[c * t_n..(c + 1) * t_n].iter().sum::<f64>();
            }
        }
        for m in &mut mean {
            *m /= count.max(1.0);
        }
        for e in 0..set.len() {
            let ep = set.epoch(e);
            for c in 0..c_n {
                m2[c] += ep[c * t_n..(c + 1) * t_n]
                    .iter()
                    .map(|v| (v - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(c_n);
        let mut flat = Vec::with_capacity(c_n);
        for c in 0..c_n {
            let s = (m2[c] / count.max(1.0)).sqrt();
            let is_flat = !(s > 1e-12 * mean[c].abs().max(1.0));
            flat.push(is_flat);
            std.push(if is_flat { 1.0 } else { s });
        }
        Self { mean, std, flat }
    }
}

/// Z-scores every channel. With `stats = None` the statistics are measured on
/// `epochs` itself and returned; otherwise the given (training-set)
/// statistics are applied unchanged.
pub fn zscore_normalize(
    epochs: &EpochSet,
    stats: Option<&ChannelStats>,
) -> Result<(EpochSet, ChannelStats), DspError> {
    let stats = match stats {
        Some(s) => {
            if s.mean.len() != epochs.n_channels || s.std.len() != epochs.n_channels {
                return Err(DspError::ChannelMismatch(format!(
                    "statistics for {} channels, epochs have {}",
                    s.mean.len(),
                    epochs.n_channels
                )));
            }
            s.clone()
        }
        None => {
            let s = ChannelStats::measure(epochs);
            for c in s.flat_channels() {
                log::warn!(
                    "channel {} is flat; left unscaled",
                    epochs.channel_labels[c]
                );
            }
            s
        }
    };
    let mut out = epochs.clone();
    let t_n = epochs.n_times;
    for e in 0..out.len() {
        let l = out.epoch_len();
        let ep = &mut out.data[e * l..(e + 1) * l];
        for c in 0..out.n_channels {
            let (m, s) = (stats.mean[c], stats.std[c]);
            for v in &mut ep[c * t_n..(c + 1) * t_n] {
                *v = (*v - m) / s;
            }
        }
    }
    Ok((out, stats))
}
