//! Chance levels, participant screening, Wilcoxon signed-rank tests and
//! scenario-table aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::edf::ClassLabel;
use crate::training::{MetricsRow, SubjectMetrics};

const BUNDLED_TABLE: &str = include_str!("../../data/published_accuracies.csv");

/// Slack for comparisons of two-decimal percentages.
const PCT_EPS: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("missing value for subject {subject}, column {column}")]
    MissingCell { subject: u32, column: String },
    #[error("malformed table: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Smallest accuracy (%) that beats guessing with probability `p0` at
/// significance `alpha` over `n` trials: `100·k*/n` with
/// `k* = min{k : P[Bin(n, p0) ≥ k] ≤ alpha}`.
pub fn chance_level(n: u64, alpha: f64, p0: f64) -> Result<f64> {
    if n == 0 || !(alpha > 0.0 && alpha < 1.0) || !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidArgument(format!(
            "n={n}, alpha={alpha}, p0={p0}"
        )));
    }
    let (lp, lq) = (p0.ln(), (1.0 - p0).ln());
    let log_pmf = |k: u64| ln_binomial(n, k) + k as f64 * lp + (n - k) as f64 * lq;
    // Accumulate the upper tail from k = n downwards in log space.
    let mut log_tail = f64::NEG_INFINITY;
    let mut k_star = n + 1;
    for k in (0..=n).rev() {
        let l = log_pmf(k);
        let hi = log_tail.max(l);
        log_tail = hi + ((log_tail - hi).exp() + (l - hi).exp()).ln();
        if log_tail.exp() <= alpha {
            k_star = k;
        } else {
            break;
        }
    }
    Ok(100.0 * k_star.min(n) as f64 / n as f64)
}

/// Share (%) of the most frequent class.
pub fn majority_baseline(labels: &[ClassLabel]) -> Result<f64> {
    if labels.is_empty() {
        return Err(StatsError::InvalidArgument("no labels".into()));
    }
    let left = labels.iter().filter(|&&l| l == ClassLabel::Left).count();
    Ok(100.0 * left.max(labels.len() - left) as f64 / labels.len() as f64)
}

/// Subjects whose overall accuracy is at least `chance + margin` points,
/// in input order.
pub fn select_participants(metrics: &[SubjectMetrics], margin: f64) -> Vec<u32> {
    metrics
        .iter()
        .filter(|m| m.overall_acc >= m.chance_level + margin - PCT_EPS)
        .map(|m| m.subject_id)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub labels: Vec<u32>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: Vec<u32>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(StatsError::InvalidArgument(format!(
                "{} pairs; need at least 2",
                a.len()
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(StatsError::InvalidArgument("non-finite value".into()));
        }
        Ok(Self { labels, a, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    /// Enumeration of all sign assignments (n_effective ≤ 20).
    Exact,
    /// Normal approximation with tie correction.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W−)`.
    pub w: f64,
    pub p_two_sided: f64,
    pub n_effective: usize,
    pub method: WilcoxonMethod,
    /// Every difference was zero; `p` is 1 by convention.
    pub all_zero: bool,
}

/// Largest `n_effective` handled by exact enumeration.
pub const EXACT_MAX_N: usize = 20;

/// Nonzero differences `a − b` (|d| below 1e-9 counts as zero), and their
/// mid-ranks. Magnitudes within 1e-9 of each other tie, which absorbs
/// rounding in differences of decimal percentages.
pub fn signed_ranks(sample: &PairedSample) -> (Vec<f64>, Vec<f64>) {
    let d: Vec<f64> = sample
        .a
        .iter()
        .zip(&sample.b)
        .map(|(a, b)| a - b)
        .filter(|d| d.abs() > PCT_EPS)
        .collect();
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&i, &j| d[i].abs().total_cmp(&d[j].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && d[idx[e]].abs() - d[idx[s]].abs() <= PCT_EPS {
            e += 1;
        }
        let mid = (s + 1 + e) as f64 / 2.0;
        for &i in &idx[s..e] {
            ranks[i] = mid;
        }
        s = e;
    }
    (d, ranks)
}

/// Exact null distribution of W+ over doubled (hence integral) mid-ranks:
/// `counts[s]` is the number of sign assignments with `2·W+ = s`.
fn exact_counts(ranks: &[f64]) -> Vec<f64> {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided exact p: `2·P[W+ ≤ w]` under the sign-flip null, capped at 1.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let counts = exact_counts(ranks);
    let limit = (2.0 * w + 1e-6).floor() as usize;
    let below: f64 = counts.iter().take(limit + 1).sum();
    (2.0 * below / 2f64.powi(ranks.len() as i32)).min(1.0)
}

/// Two-sided normal-approximation p with tie-corrected variance and a 0.5
/// continuity correction.
pub fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut ties: BTreeMap<u64, f64> = BTreeMap::new();
    for r in ranks {
        *ties.entry((2.0 * r).round() as u64).or_default() += 1.0;
    }
    let tie_term: f64 = ties.values().map(|t| t * t * t - t).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    if !(var > 0.0) {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

/// Wilcoxon signed-rank test on `a − b`. Exact for up to
/// [`EXACT_MAX_N`] nonzero differences, normal approximation beyond.
pub fn wilcoxon_signed_rank(sample: &PairedSample) -> Result<WilcoxonResult> {
    if sample.a.len() != sample.b.len() {
        return Err(StatsError::LengthMismatch(sample.a.len(), sample.b.len()));
    }
    if sample.a.len() < 2 {
        return Err(StatsError::InvalidArgument("need at least 2 pairs".into()));
    }
    let (d, ranks) = signed_ranks(sample);
    if d.is_empty() {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            w_minus: 0.0,
            w: 0.0,
            p_two_sided: 1.0,
            n_effective: 0,
            method: WilcoxonMethod::Exact,
            all_zero: true,
        });
    }
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let w_minus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| r)
        .sum();
    let w = w_plus.min(w_minus);
    let (p, method) = if d.len() <= EXACT_MAX_N {
        (exact_p(&ranks, w), WilcoxonMethod::Exact)
    } else {
        (normal_p(&ranks, w), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        w_plus,
        w_minus,
        w,
        p_two_sided: p,
        n_effective: d.len(),
        method,
        all_zero: false,
    })
}

/// Channel-set scenario of a table column group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    All64,
    /// Union of per-class Grad-CAM top-k channels (17 in the bundled table).
    #[serde(alias = "gradcam17")]
    GradcamUnion,
    Mi21,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::All64, Scenario::GradcamUnion, Scenario::Mi21];

    /// Name used in metrics files.
    pub fn name(self) -> &'static str {
        match self {
            Scenario::All64 => "all64",
            Scenario::GradcamUnion => "gradcam_union",
            Scenario::Mi21 => "mi21",
        }
    }

    /// Column prefix in the bundled table.
    fn table_prefix(self) -> &'static str {
        match self {
            Scenario::All64 => "all64",
            Scenario::GradcamUnion => "gradcam17",
            Scenario::Mi21 => "mi21",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|sc| sc.name() == s || sc.table_prefix() == s)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Overall / left / right accuracies (%).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub overall: f64,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub subject: u32,
    pub chance: f64,
    pub scenarios: BTreeMap<Scenario, Accuracies>,
    /// `published` for the bundled reference values, `computed` for pipeline output.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub rows: Vec<TableRow>,
}

#[derive(Deserialize)]
struct RawRow {
    subject: u32,
    chance: f64,
    all64_overall: Option<f64>,
    all64_left: Option<f64>,
    all64_right: Option<f64>,
    gradcam17_overall: Option<f64>,
    gradcam17_left: Option<f64>,
    gradcam17_right: Option<f64>,
    mi21_overall: Option<f64>,
    mi21_left: Option<f64>,
    mi21_right: Option<f64>,
    provenance: String,
}

impl ScenarioTable {
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut rows = Vec::new();
        for raw in reader.deserialize::<RawRow>() {
            let r = raw.map_err(|e| StatsError::Format(e.to_string()))?;
            let acc = |overall: Option<f64>, left: Option<f64>, right: Option<f64>| {
                Some(Accuracies {
                    overall: overall?,
                    left: left?,
                    right: right?,
                })
            };
            let scenarios: BTreeMap<Scenario, Accuracies> = [
                (
                    Scenario::All64,
                    acc(r.all64_overall, r.all64_left, r.all64_right),
                ),
                (
                    Scenario::GradcamUnion,
                    acc(r.gradcam17_overall, r.gradcam17_left, r.gradcam17_right),
                ),
                (
                    Scenario::Mi21,
                    acc(r.mi21_overall, r.mi21_left, r.mi21_right),
                ),
            ]
            .into_iter()
            .filter_map(|(sc, a)| Some((sc, a?)))
            .collect();
            rows.push(TableRow {
                subject: r.subject,
                chance: r.chance,
                scenarios,
                provenance: r.provenance,
            });
        }
        Ok(Self { rows })
    }

    /// The published per-subject table (16 subjects).
    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_TABLE).expect("bundled table parses")
    }

    /// Groups pipeline metrics by subject; scenarios are taken from the
    /// row names.
    pub fn from_metrics(rows: &[MetricsRow]) -> Result<Self> {
        let mut by_subject: BTreeMap<u32, TableRow> = BTreeMap::new();
        for r in rows {
            let sc = Scenario::from_name(&r.scenario)
                .ok_or_else(|| StatsError::Format(format!("unknown scenario `{}`", r.scenario)))?;
            let m = &r.metrics;
            let row = by_subject.entry(m.subject_id).or_insert_with(|| TableRow {
                subject: m.subject_id,
                chance: m.chance_level,
                scenarios: BTreeMap::new(),
                provenance: "computed".into(),
            });
            row.scenarios.insert(
                sc,
                Accuracies {
                    overall: m.overall_acc,
                    left: m.left_acc,
                    right: m.right_acc,
                },
            );
        }
        Ok(Self {
            rows: by_subject.into_values().collect(),
        })
    }

    /// One column across subjects.
    pub fn column(&self, scenario: Scenario, pick: fn(&Accuracies) -> f64) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                r.scenarios
                    .get(&scenario)
                    .map(pick)
                    .ok_or_else(|| StatsError::MissingCell {
                        subject: r.subject,
                        column: scenario.name().into(),
                    })
            })
            .collect()
    }

    /// `SubjectMetrics`-shaped view of one scenario (counts unknown: zero).
    pub fn metrics(&self, scenario: Scenario) -> Result<Vec<SubjectMetrics>> {
        self.rows
            .iter()
            .map(|r| {
                let a = r
                    .scenarios
                    .get(&scenario)
                    .ok_or_else(|| StatsError::MissingCell {
                        subject: r.subject,
                        column: scenario.name().into(),
                    })?;
                Ok(SubjectMetrics {
                    subject_id: r.subject,
                    overall_acc: a.overall,
                    left_acc: a.left,
                    right_acc: a.right,
                    chance_level: r.chance,
                    n_test: 0,
                    n_test_left: 0,
                    n_test_right: 0,
                    correct_left: 0,
                    correct_right: 0,
                })
            })
            .collect()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.subject).collect()
    }

    /// CSV in the bundled layout (`subject, chance`, overall/left/right per
    /// scenario, `provenance`). A missing scenario is left blank.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["subject".to_string(), "chance".to_string()];
        for sc in Scenario::ALL {
            for col in ["overall", "left", "right"] {
                header.push(format!("{}_{col}", sc.table_prefix()));
            }
        }
        header.push("provenance".into());
        let fmt_err = |e: csv::Error| StatsError::Format(e.to_string());
        w.write_record(&header).map_err(fmt_err)?;
        for r in &self.rows {
            let mut rec = vec![r.subject.to_string(), r.chance.to_string()];
            for sc in Scenario::ALL {
                match r.scenarios.get(&sc) {
                    Some(a) => rec.extend([a.overall, a.left, a.right].map(|v| v.to_string())),
                    None => rec.extend([String::new(), String::new(), String::new()]),
                }
            }
            rec.push(r.provenance.clone());
            w.write_record(&rec).map_err(fmt_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| StatsError::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| StatsError::Format(e.to_string()))
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample (n − 1) standard deviation.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub scenario: Scenario,
    /// `overall`, `left` or `right`.
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Scenario,
    pub b: Scenario,
    /// `mean(a) − mean(b)` of overall accuracy.
    pub mean_difference: f64,
    pub wilcoxon: WilcoxonResult,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub n_subjects: usize,
    pub alpha: f64,
    pub columns: Vec<ColumnSummary>,
    pub comparisons: Vec<Comparison>,
}

/// Mean ± sample SD per column and pairwise overall-accuracy comparisons
/// (all64−gradcam, all64−mi21, mi21−gradcam).
pub fn summarize_table(table: &ScenarioTable, alpha: f64) -> Result<TableSummary> {
    if table.rows.is_empty() {
        return Err(StatsError::InvalidArgument("empty table".into()));
    }
    type Pick = (&'static str, fn(&Accuracies) -> f64);
    let picks: [Pick; 3] = [
        ("overall", |a| a.overall),
        ("left", |a| a.left),
        ("right", |a| a.right),
    ];
    let mut columns = Vec::new();
    for sc in Scenario::ALL {
        if table.rows.iter().all(|r| !r.scenarios.contains_key(&sc)) {
            continue;
        }
        for (name, pick) in picks {
            let v = table.column(sc, pick)?;
            columns.push(ColumnSummary {
                scenario: sc,
                column: name.into(),
                mean: mean(&v),
                sd: sample_sd(&v),
            });
        }
    }
    let mut comparisons = Vec::new();
    let pairs = [
        (Scenario::All64, Scenario::GradcamUnion),
        (Scenario::All64, Scenario::Mi21),
        (Scenario::Mi21, Scenario::GradcamUnion),
    ];
    for (a, b) in pairs {
        let (Ok(va), Ok(vb)) = (
            table.column(a, |x| x.overall),
            table.column(b, |x| x.overall),
        ) else {
            continue;
        };
        if va.len() < 2 {
            continue;
        }
        let sample = PairedSample::new(table.subjects(), va.clone(), vb.clone())?;
        let wilcoxon = wilcoxon_signed_rank(&sample)?;
        comparisons.push(Comparison {
            a,
            b,
            mean_difference: mean(&va) - mean(&vb),
            significant: !wilcoxon.all_zero && wilcoxon.p_two_sided < alpha,
            wilcoxon,
        });
    }
    Ok(TableSummary {
        n_subjects: table.rows.len(),
        alpha,
        columns,
        comparisons,
    })
}

impl fmt::Display for TableSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} subjects", self.n_subjects)?;
        for c in &self.columns {
            writeln!(
                f,
                "{:<14} {:<8} {:6.2} ± {:.2}",
                c.scenario.name(),
                c.column,
                c.mean,
                c.sd
            )?;
        }
        for c in &self.comparisons {
            writeln!(
                f,
                "{} − {}: {:+.2} points, W = {}, p = {:.4} ({}) → {}",
                c.a,
                c.b,
                c.mean_difference,
                c.wilcoxon.w,
                c.wilcoxon.p_two_sided,
                match c.wilcoxon.method {
                    WilcoxonMethod::Exact => "exact",
                    WilcoxonMethod::Normal => "normal approx.",
                },
                if c.significant {
                    format!("significant at α={}", self.alpha)
                } else {
                    format!("not significant at α={}", self.alpha)
                }
            )?;
        }
        Ok(())
    }
}
