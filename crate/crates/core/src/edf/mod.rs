//! EDF/EDF+ ingestion for the motor movement/imagery recordings.
//!
//! [`parse_edf`] decodes a complete file held in memory, [`serialize_edf`]
//! writes one back, [`extract_trials`] turns T1/T2 annotations into labelled
//! trials and [`validate_recording`] checks a recording against the dataset
//! conventions (64 channels at 160 Hz). [`fetch`] downloads runs and keeps a
//! digest manifest.

pub mod fetch;
mod parse;
mod trials;
mod validate;
mod write;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_edf;
pub use trials::{extract_trials, Trial, TrialSet};
pub use validate::{validate_recording, ValidationPolicy, ValidationReport, Violation};
pub use write::serialize_edf;

/// Size of the fixed part of an EDF header, and of each per-signal header.
pub const HEADER_BLOCK: usize = 256;

/// Label EDF+ uses for annotation signals.
pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Error, PartialEq)]
pub enum EdfError {
    #[error("file truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("inconsistent header: {0}")]
    Inconsistent(String),
    #[error("header field `{field}` is not numeric: {value:?}")]
    NonNumeric { field: &'static str, value: String },
    #[error("unsupported sample width ({0})")]
    UnsupportedSampleWidth(String),
    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),
    #[error("channel {channel}: value {value} outside the representable range [{min}, {max}]")]
    OutOfRange {
        channel: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("header field `{field}` too long: {value:?} exceeds {limit} bytes")]
    FieldTooLong {
        field: &'static str,
        value: String,
        limit: usize,
    },
    #[error("malformed annotation: {0}")]
    Annotation(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Motor task class. The order is fixed: `Left` is class 0, `Right` class 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClassLabel {
    Left,
    Right,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Left, ClassLabel::Right];

    pub fn index(self) -> usize {
        match self {
            ClassLabel::Left => 0,
            ClassLabel::Right => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Left => "left",
            ClassLabel::Right => "right",
        }
    }

    /// Dataset event code: T1 is the left fist, T2 the right fist.
    pub fn from_event(code: &str) -> Option<Self> {
        match code {
            "T1" => Some(ClassLabel::Left),
            "T2" => Some(ClassLabel::Right),
            _ => None,
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

impl SignalHeader {
    /// Physical units per digital step.
    pub fn quantization_step(&self) -> f64 {
        (self.physical_max - self.physical_min) / f64::from(self.digital_max - self.digital_min)
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (f64::from(digital) - f64::from(self.digital_min)) * self.quantization_step()
            + self.physical_min
    }
}

/// Decoded file header. `signals` lists ordinary data signals only; the
/// annotation signal layout is kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfHeader {
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub reserved: String,
    pub n_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
    pub annotation_samples_per_record: Option<usize>,
}

impl EdfHeader {
    pub fn is_edf_plus(&self) -> bool {
        self.reserved.starts_with("EDF+")
    }
}

/// Continuous multichannel EEG. `samples` is channel-major, in physical
/// units (µV for the dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject_id: u32,
    pub run_id: u32,
    pub sampling_rate: f64,
    pub channel_labels: Vec<String>,
    pub samples: Vec<Vec<f64>>,
    pub annotations: Vec<Annotation>,
    pub header: Option<EdfHeader>,
}

impl Recording {
    pub fn new(sampling_rate: f64, channel_labels: Vec<String>, samples: Vec<Vec<f64>>) -> Self {
        Self {
            subject_id: 0,
            run_id: 0,
            sampling_rate,
            channel_labels,
            samples,
            annotations: Vec::new(),
            header: None,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn duration_seconds(&self) -> f64 {
        if self.sampling_rate > 0.0 {
            self.n_samples() as f64 / self.sampling_rate
        } else {
            0.0
        }
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.channel_labels.iter().position(|l| l == label)
    }
}

/// Normalizes the dataset's electrode spelling (`Fc5.`, `Cz..`, `Fp1.`) to
/// standard 10-10 labels (`FC5`, `Cz`, `Fp1`).
pub fn normalize_channel_label(raw: &str) -> String {
    let trimmed = raw.trim().trim_end_matches('.');
    let mut upper = trimmed.to_ascii_uppercase();
    if upper.ends_with('Z') {
        upper.pop();
        upper.push('z');
    }
    if let Some(rest) = upper.strip_prefix("FP") {
        upper = format!("Fp{rest}");
    }
    upper
}

/// Parses `S042R03.edf`-style names into `(subject, run)`.
pub fn ids_from_filename(path: &Path) -> Option<(u32, u32)> {
    let stem = path.file_stem()?.to_str()?.to_ascii_uppercase();
    let rest = stem.strip_prefix('S')?;
    let (subject, run) = rest.split_once('R')?;
    Some((subject.parse().ok()?, run.parse().ok()?))
}

/// Reads and parses a file, taking subject/run ids from its name.
pub fn read_edf_file(path: &Path) -> Result<Recording, EdfError> {
    let bytes =
        std::fs::read(path).map_err(|e| EdfError::Io(format!("{}: {e}", path.display())))?;
    let mut rec = parse_edf(&bytes)?;
    if let Some((s, r)) = ids_from_filename(path) {
        rec.subject_id = s;
        rec.run_id = r;
    }
    Ok(rec)
}
