use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DspError;
use crate::edf::{ClassLabel, Recording, Trial};

const MAGIC: &[u8; 8] = b"NCEPOCH1";

/// Where an epoch came from: subject, run, trial index within the run, and
/// window index within the trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpochProvenance {
    pub subject: u32,
    pub run: u32,
    pub trial: usize,
    pub window: usize,
}

impl EpochProvenance {
    /// Identifies the source trial; windows of one trial share it.
    pub fn trial_key(&self) -> (u32, u32, usize) {
        (self.subject, self.run, self.trial)
    }
}

/// A single window, channel-major `(n_channels × n_times)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: Vec<f64>,
    pub label: ClassLabel,
    pub provenance: EpochProvenance,
}

/// Labelled windows stored as one flat `(n_epochs, n_channels, n_times)`
/// array.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    pub data: Vec<f64>,
    pub n_channels: usize,
    pub n_times: usize,
    pub labels: Vec<ClassLabel>,
    pub channel_labels: Vec<String>,
    pub sampling_rate: f64,
    pub provenance: Vec<EpochProvenance>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_epochs: usize,
    n_channels: usize,
    n_times: usize,
    sampling_rate: f64,
    channel_labels: Vec<String>,
    labels: Vec<ClassLabel>,
    provenance: Vec<EpochProvenance>,
}

impl EpochSet {
    pub fn empty(channel_labels: Vec<String>, n_times: usize, sampling_rate: f64) -> Self {
        Self {
            data: Vec::new(),
            n_channels: channel_labels.len(),
            n_times,
            labels: Vec::new(),
            channel_labels,
            sampling_rate,
            provenance: Vec::new(),
        }
    }

    pub fn from_epochs(
        epochs: Vec<Epoch>,
        channel_labels: Vec<String>,
        n_times: usize,
        sampling_rate: f64,
    ) -> Result<Self, DspError> {
        let mut set = Self::empty(channel_labels, n_times, sampling_rate);
        for e in epochs {
            set.push(e)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, epoch: Epoch) -> Result<(), DspError> {
        if epoch.data.len() != self.epoch_len() {
            return Err(DspError::ChannelMismatch(format!(
                "epoch has {} values, set expects {}×{}",
                epoch.data.len(),
                self.n_channels,
                self.n_times
            )));
        }
        self.data.extend_from_slice(&epoch.data);
        self.labels.push(epoch.label);
        self.provenance.push(epoch.provenance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn epoch_len(&self) -> usize {
        self.n_channels * self.n_times
    }

    pub fn epoch(&self, i: usize) -> &[f64] {
        let l = self.epoch_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn get(&self, i: usize) -> Epoch {
        Epoch {
            data: self.epoch(i).to_vec(),
            label: self.labels[i],
            provenance: self.provenance[i],
        }
    }

    /// New set holding the listed epochs, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::empty(
            self.channel_labels.clone(),
            self.n_times,
            self.sampling_rate,
        );
        out.data.reserve(indices.len() * self.epoch_len());
        for &i in indices {
            out.data.extend_from_slice(self.epoch(i));
            out.labels.push(self.labels[i]);
            out.provenance.push(self.provenance[i]);
        }
        out
    }

    pub fn extend(&mut self, other: &EpochSet) -> Result<(), DspError> {
        if other.channel_labels != self.channel_labels || other.n_times != self.n_times {
            return Err(DspError::ChannelMismatch(
                "epoch sets differ in layout".into(),
            ));
        }
        self.data.extend_from_slice(&other.data);
        self.labels.extend_from_slice(&other.labels);
        self.provenance.extend_from_slice(&other.provenance);
        Ok(())
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for l in &self.labels {
            c[l.index()] += 1;
        }
        c
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 + 24 + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&3u32.to_le_bytes());
        for d in [self.len(), self.n_channels, self.n_times] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    fn sidecar(&self) -> Sidecar {
        Sidecar {
            n_epochs: self.len(),
            n_channels: self.n_channels,
            n_times: self.n_times,
            sampling_rate: self.sampling_rate,
            channel_labels: self.channel_labels.clone(),
            labels: self.labels.clone(),
            provenance: self.provenance.clone(),
        }
    }

    /// Writes the binary array to `path` and labels/provenance to the
    /// `.json` sibling.
    pub fn save(&self, path: &Path) -> Result<(), DspError> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        let json = serde_json::to_string_pretty(&self.sidecar())
            .map_err(|e| DspError::Format(e.to_string()))?;
        std::fs::write(path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DspError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let text = std::fs::read_to_string(path.with_extension("json"))?;
        let side: Sidecar =
            serde_json::from_str(&text).map_err(|e| DspError::Format(e.to_string()))?;
        let header = 8 + 4 + 24;
        if bytes.len() < header || &bytes[..8] != MAGIC {
            return Err(DspError::Format("missing NCEPOCH1 header".into()));
        }
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if ndim != 3 {
            return Err(DspError::Format(format!(
                "expected 3 dimensions, found {ndim}"
            )));
        }
        let dims: Vec<usize> = (0..3)
            .map(|i| {
                u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().expect("8 bytes"))
                    as usize
            })
            .collect();
        if dims != [side.n_epochs, side.n_channels, side.n_times]
            || side.labels.len() != side.n_epochs
            || side.provenance.len() != side.n_epochs
            || side.channel_labels.len() != side.n_channels
        {
            return Err(DspError::Format("array header and sidecar disagree".into()));
        }
        let count = dims.iter().product::<usize>();
        if bytes.len() != header + count * 8 {
            return Err(DspError::Format(format!(
                "payload holds {} bytes, expected {}",
                bytes.len() - header,
                count * 8
            )));
        }
        let data = bytes[header..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            data,
            n_channels: side.n_channels,
            n_times: side.n_times,
            labels: side.labels,
            channel_labels: side.channel_labels,
            sampling_rate: side.sampling_rate,
            provenance: side.provenance,
        })
    }
}

/// Cuts a trial into `floor(duration / window)` consecutive non-overlapping
/// windows of `round(window · fs)` samples.
pub fn epoch_windows(trial: &Trial, filtered: &Recording, window_seconds: f64) -> Vec<Epoch> {
    let fs = filtered.sampling_rate;
    if !(window_seconds > 0.0) || !(fs > 0.0) {
        return Vec::new();
    }
    let win = (window_seconds * fs).round() as usize;
    if win == 0 {
        return Vec::new();
    }
    let duration = trial.length_samples as f64 / fs;
    let by_time = (duration / window_seconds + 1e-9).floor() as usize;
    let available = filtered.n_samples().saturating_sub(trial.onset_sample);
    let count = by_time.min(trial.length_samples.min(available) / win);
    (0..count)
        .map(|w| {
            let start = trial.onset_sample + w * win;
            let mut data = Vec::with_capacity(filtered.n_channels() * win);
            for row in &filtered.samples {
                data.extend_from_slice(&row[start..start + win]);
            }
            Epoch {
                data,
                label: trial.class_label,
                provenance: EpochProvenance {
                    subject: trial.subject_id,
                    run: trial.run_id,
                    trial: trial.index,
                    window: w,
                },
            }
        })
        .collect()
}

/// Windows every trial of one (already filtered) recording.
pub fn epochs_from_recording(
    filtered: &Recording,
    trials: &[Trial],
    window_seconds: f64,
) -> Result<EpochSet, DspError> {
    let n_times = (window_seconds * filtered.sampling_rate).round() as usize;
    let mut set = EpochSet::empty(
        filtered.channel_labels.clone(),
        n_times,
        filtered.sampling_rate,
    );
    for t in trials {
        for e in epoch_windows(t, filtered, window_seconds) {
            set.push(e)?;
        }
    }
    Ok(set)
}
