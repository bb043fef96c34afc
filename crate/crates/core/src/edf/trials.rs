use serde::{Deserialize, Serialize};

use super::{ClassLabel, Recording};

/// One labelled motor task segment within a recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub subject_id: u32,
    pub run_id: u32,
    /// Position among this recording's T1/T2 events.
    pub index: usize,
    pub onset_sample: usize,
    pub length_samples: usize,
    pub class_label: ClassLabel,
    /// Set when the annotation ran past the end of the data and the trial
    /// was cut to the available samples.
    pub truncated: bool,
}

impl Trial {
    pub fn end_sample(&self) -> usize {
        self.onset_sample + self.length_samples
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
    /// Annotation labels that were neither rest nor a task class.
    pub unknown_labels: Vec<String>,
}

impl TrialSet {
    pub fn truncated_count(&self) -> usize {
        self.trials.iter().filter(|t| t.truncated).count()
    }
}

/// Converts T1/T2 annotations into trials; T0 (rest) is skipped and any other
/// label is reported and ignored.
pub fn extract_trials(rec: &Recording) -> TrialSet {
    let n = rec.n_samples();
    let mut out = TrialSet::default();
    for ann in &rec.annotations {
        let Some(class_label) = ClassLabel::from_event(&ann.label) else {
            if ann.label != "T0" {
                log::warn!(
                    "S{:03}R{:02}: ignoring annotation label {:?}",
                    rec.subject_id,
                    rec.run_id,
                    ann.label
                );
                out.unknown_labels.push(ann.label.clone());
            }
            continue;
        };
        let onset = (ann.onset * rec.sampling_rate).round().max(0.0) as usize;
        let wanted = (ann.duration * rec.sampling_rate).round().max(0.0) as usize;
        let onset_sample = onset.min(n);
        let length_samples = wanted.min(n - onset_sample);
        let truncated = length_samples < wanted;
        if truncated {
            log::warn!(
                "S{:03}R{:02}: {} trial at {:.3}s truncated from {wanted} to {length_samples} samples",
                rec.subject_id,
                rec.run_id,
                class_label,
                ann.onset
            );
        }
        out.trials.push(Trial {
            subject_id: rec.subject_id,
            run_id: rec.run_id,
            index: out.trials.len(),
            onset_sample,
            length_samples,
            class_label,
            truncated,
        });
    }
    out
}
