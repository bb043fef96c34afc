use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Result, TrainError};

/// Test-set accuracies for one subject, as percentages of exact counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: u32,
    pub overall_acc: f64,
    pub left_acc: f64,
    pub right_acc: f64,
    pub chance_level: f64,
    pub n_test: usize,
    pub n_test_left: usize,
    pub n_test_right: usize,
    pub correct_left: usize,
    pub correct_right: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Builds metrics from per-class correct counts `[left, right]` and class
/// totals `[left, right]`. A class with no test windows reports 0.
pub fn metrics_from_counts(
    subject_id: u32,
    correct: [usize; 2],
    totals: [usize; 2],
    chance_level: f64,
) -> SubjectMetrics {
    let n = totals[0] + totals[1];
    SubjectMetrics {
        subject_id,
        overall_acc: pct(correct[0] + correct[1], n),
        left_acc: pct(correct[0], totals[0]),
        right_acc: pct(correct[1], totals[1]),
        chance_level,
        n_test: n,
        n_test_left: totals[0],
        n_test_right: totals[1],
        correct_left: correct[0],
        correct_right: correct[1],
    }
}

/// One CSV line: a subject's metrics under a channel scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    #[serde(flatten)]
    pub metrics: SubjectMetrics,
}

#[derive(Serialize, Deserialize)]
struct FlatRow {
    scenario: String,
    subject_id: u32,
    overall_acc: f64,
    left_acc: f64,
    right_acc: f64,
    chance_level: f64,
    n_test: usize,
    n_test_left: usize,
    n_test_right: usize,
    correct_left: usize,
    correct_right: usize,
}

impl From<&MetricsRow> for FlatRow {
    fn from(r: &MetricsRow) -> Self {
        let m = &r.metrics;
        Self {
            scenario: r.scenario.clone(),
            subject_id: m.subject_id,
            overall_acc: m.overall_acc,
            left_acc: m.left_acc,
            right_acc: m.right_acc,
            chance_level: m.chance_level,
            n_test: m.n_test,
            n_test_left: m.n_test_left,
            n_test_right: m.n_test_right,
            correct_left: m.correct_left,
            correct_right: m.correct_right,
        }
    }
}

impl From<FlatRow> for MetricsRow {
    fn from(r: FlatRow) -> Self {
        Self {
            scenario: r.scenario,
            metrics: SubjectMetrics {
                subject_id: r.subject_id,
                overall_acc: r.overall_acc,
                left_acc: r.left_acc,
                right_acc: r.right_acc,
                chance_level: r.chance_level,
                n_test: r.n_test,
                n_test_left: r.n_test_left,
                n_test_right: r.n_test_right,
                correct_left: r.correct_left,
                correct_right: r.correct_right,
            },
        }
    }
}

// csv cannot serialize flattened structs, hence the mirror type.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TrainError::Format(e.to_string()))?;
    for r in rows {
        w.serialize(FlatRow::from(r))
            .map_err(|e| TrainError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| TrainError::Format(e.to_string()))?;
    r.deserialize::<FlatRow>()
        .map(|row| {
            row.map(MetricsRow::from)
                .map_err(|e| TrainError::Format(e.to_string()))
        })
        .collect()
}

pub fn write_metrics_json(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let json = serde_json::to_string_pretty(rows).map_err(|e| TrainError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
