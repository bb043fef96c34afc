use std::fmt;

use serde::{Deserialize, Serialize};

use super::Recording;

/// Expected recording layout; defaults follow the motor imagery dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    pub sampling_rate: f64,
    pub n_channels: usize,
    pub require_annotations: bool,
}

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            sampling_rate: 160.0,
            n_channels: 64,
            require_annotations: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    SamplingRate {
        expected: f64,
        found: f64,
    },
    ChannelCount {
        expected: usize,
        found: usize,
    },
    RaggedRows {
        channel: usize,
        len: usize,
        expected: usize,
    },
    NonFinite {
        channel: usize,
        sample: usize,
    },
    MissingAnnotations,
    AnnotationOutOfBounds {
        index: usize,
        end_seconds: f64,
        duration_seconds: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SamplingRate { expected, found } => {
                write!(f, "sampling rate {found} Hz (expected {expected} Hz)")
            }
            Violation::ChannelCount { expected, found } => {
                write!(f, "{found} channels (expected {expected})")
            }
            Violation::RaggedRows {
                channel,
                len,
                expected,
            } => {
                write!(
                    f,
                    "channel {channel} has {len} samples (expected {expected})"
                )
            }
            Violation::NonFinite { channel, sample } => {
                write!(
                    f,
                    "non-finite sample in channel {channel} at index {sample}"
                )
            }
            Violation::MissingAnnotations => f.write_str("no annotations"),
            Violation::AnnotationOutOfBounds {
                index,
                end_seconds,
                duration_seconds,
            } => write!(
                f,
                "annotation {index} ends at {end_seconds}s past the {duration_seconds}s of data"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_conformant(&self) -> bool {
        self.violations.is_empty()
    }

    /// Violations that make the recording unusable for the pipeline (layout
    /// mismatches and corrupt samples, as opposed to annotation issues).
    pub fn is_fatal(&self) -> bool {
        self.violations.iter().any(|v| {
            matches!(
                v,
                Violation::SamplingRate { .. }
                    | Violation::ChannelCount { .. }
                    | Violation::RaggedRows { .. }
                    | Violation::NonFinite { .. }
            )
        })
    }
}

/// Lists every deviation from `policy`. Never fails; an empty report means
/// the recording is conformant. Only the first non-finite sample of each
/// channel is reported.
pub fn validate_recording(rec: &Recording, policy: &ValidationPolicy) -> ValidationReport {
    let mut violations = Vec::new();
    if rec.sampling_rate != policy.sampling_rate {
        violations.push(Violation::SamplingRate {
            expected: policy.sampling_rate,
            found: rec.sampling_rate,
        });
    }
    let found = rec.n_channels().max(rec.samples.len());
    if found != policy.n_channels {
        violations.push(Violation::ChannelCount {
            expected: policy.n_channels,
            found,
        });
    }
    let n = rec.n_samples();
    for (c, row) in rec.samples.iter().enumerate() {
        if row.len() != n {
            violations.push(Violation::RaggedRows {
                channel: c,
                len: row.len(),
                expected: n,
            });
        }
        if let Some(s) = row.iter().position(|v| !v.is_finite()) {
            violations.push(Violation::NonFinite {
                channel: c,
                sample: s,
            });
        }
    }
    if policy.require_annotations && rec.annotations.is_empty() {
        violations.push(Violation::MissingAnnotations);
    }
    if rec.sampling_rate > 0.0 {
        let total = rec.duration_seconds();
        let tol = 1.0 / rec.sampling_rate;
        for (i, a) in rec.annotations.iter().enumerate() {
            let end = a.onset + a.duration;
            if end > total + tol {
                violations.push(Violation::AnnotationOutOfBounds {
                    index: i,
                    end_seconds: end,
                    duration_seconds: total,
                });
            }
        }
    }
    ValidationReport { violations }
}
