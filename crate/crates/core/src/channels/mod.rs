//! Electrode montage and channel-subset construction.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::dsp::EpochSet;
use crate::explain::ChannelRanking;

const BUNDLED_MONTAGE: &str = include_str!("../../data/montage_64.csv");

/// The motor-cortex set: frontal-central, central and centro-parietal rows.
pub const MI_CHANNELS: [&str; 21] = [
    "FC5", "FC3", "FC1", "FCz", "FC2", "FC4", "FC6", "C5", "C3", "C1", "Cz", "C2", "C4", "C6",
    "CP5", "CP3", "CP1", "CPz", "CP2", "CP4", "CP6",
];

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("channel `{0}` is not in the montage")]
    UnknownChannel(String),
    #[error("channel `{0}` listed twice")]
    Duplicate(String),
    #[error("empty channel subset")]
    Empty,
    #[error("rankings cover different channel sets")]
    MismatchedRankings,
    #[error("k = {k} exceeds {n} channels")]
    TooLarge { k: usize, n: usize },
    #[error("malformed montage: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageEntry {
    pub label: String,
    /// Unit-sphere position; +x right ear, +y nose, +z vertex.
    pub position: [f64; 3],
    /// Azimuthal-equidistant projection about the vertex; the equator maps
    /// to the unit circle.
    pub disc: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MontageLayout {
    pub name: String,
    /// Entries in montage (dataset channel) order.
    pub entries: Vec<MontageEntry>,
}

#[derive(Deserialize)]
struct MontageRow {
    label: String,
    x: f64,
    y: f64,
    z: f64,
}

fn project([x, y, z]: [f64; 3]) -> [f64; 2] {
    let r = z.clamp(-1.0, 1.0).acos() / FRAC_PI_2;
    let h = x.hypot(y);
    if h < 1e-12 {
        [0.0, 0.0]
    } else {
        [r * x / h, r * y / h]
    }
}

impl MontageLayout {
    /// Parses `label,x,y,z` rows; coordinates are normalized to the unit
    /// sphere.
    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for row in reader.deserialize::<MontageRow>() {
            let row = row.map_err(|e| ChannelError::Format(e.to_string()))?;
            let norm = (row.x * row.x + row.y * row.y + row.z * row.z).sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(ChannelError::Format(format!(
                    "`{}` has no direction",
                    row.label
                )));
            }
            if !seen.insert(row.label.clone()) {
                return Err(ChannelError::Duplicate(row.label));
            }
            let position = [row.x / norm, row.y / norm, row.z / norm];
            entries.push(MontageEntry {
                label: row.label,
                position,
                disc: project(position),
            });
        }
        Ok(Self {
            name: name.to_string(),
            entries,
        })
    }

    /// The 64-electrode 10-10 layout of the motor-imagery dataset.
    pub fn bundled() -> Self {
        Self::from_csv("eegmmidb-64", BUNDLED_MONTAGE).expect("bundled montage parses")
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.label == label)
    }

    pub fn get(&self, label: &str) -> Option<&MontageEntry> {
        self.entries.iter().find(|e| e.label == label)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy without `label`; used to exercise missing-channel paths.
    pub fn without(&self, label: &str) -> Self {
        Self {
            name: self.name.clone(),
            entries: self
                .entries
                .iter()
                .filter(|e| e.label != label)
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetOrigin {
    GradcamUnion,
    DomainMi21,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSubset {
    pub labels: Vec<String>,
    pub origin: SubsetOrigin,
    /// Free-text description of how the subset was built.
    pub provenance: String,
}

impl ChannelSubset {
    /// Checks distinctness and membership in `montage`.
    pub fn manual(labels: Vec<String>, montage: &MontageLayout, provenance: &str) -> Result<Self> {
        let subset = Self {
            labels,
            origin: SubsetOrigin::Manual,
            provenance: provenance.to_string(),
        };
        subset.validate(montage)?;
        Ok(subset)
    }

    pub fn validate(&self, montage: &MontageLayout) -> Result<()> {
        if self.labels.is_empty() {
            return Err(ChannelError::Empty);
        }
        let mut seen = BTreeSet::new();
        for l in &self.labels {
            if !seen.insert(l) {
                return Err(ChannelError::Duplicate(l.clone()));
            }
            if montage.index_of(l).is_none() {
                return Err(ChannelError::UnknownChannel(l.clone()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }
}

/// Union of the two rankings' first `k` labels, ordered by descending
/// best score (ties: montage order of the left ranking).
pub fn top_k_union(
    left: &ChannelRanking,
    right: &ChannelRanking,
    k: usize,
) -> Result<ChannelSubset> {
    let lset: BTreeSet<&String> = left.order.iter().collect();
    let rset: BTreeSet<&String> = right.order.iter().collect();
    if lset != rset {
        return Err(ChannelError::MismatchedRankings);
    }
    let n = left.order.len();
    if k == 0 || k > n {
        return Err(ChannelError::TooLarge { k, n });
    }
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in [left, right] {
        for l in &r.order[..k] {
            let s = r.score(l).unwrap_or(f64::NEG_INFINITY);
            let e = best.entry(l.as_str()).or_insert(s);
            *e = e.max(s);
        }
    }
    let position = |l: &str| {
        left.scores
            .iter()
            .position(|(m, _)| m == l)
            .unwrap_or(usize::MAX)
    };
    let mut labels: Vec<&str> = best.keys().copied().collect();
    labels.sort_by(|a, b| {
        best[b]
            .total_cmp(&best[a])
            .then(position(a).cmp(&position(b)))
    });
    let common = left.order[..k]
        .iter()
        .filter(|l| right.order[..k].contains(l))
        .count();
    Ok(ChannelSubset {
        labels: labels.into_iter().map(str::to_string).collect(),
        origin: SubsetOrigin::GradcamUnion,
        provenance: format!("union of per-class top-{k} channels ({common} common)"),
    })
}

/// The fixed 21 motor-cortex channels, checked against `montage`.
pub fn mi_channels(montage: &MontageLayout) -> Result<ChannelSubset> {
    let labels: Vec<String> = MI_CHANNELS.iter().map(|s| s.to_string()).collect();
    for l in &labels {
        if montage.index_of(l).is_none() {
            return Err(ChannelError::UnknownChannel(l.clone()));
        }
    }
    Ok(ChannelSubset {
        labels,
        origin: SubsetOrigin::DomainMi21,
        provenance: "motor-cortex rows FC/C/CP".into(),
    })
}

/// Keeps (and reorders to) the subset's channels.
pub fn subset_epochs(epochs: &EpochSet, subset: &ChannelSubset) -> Result<EpochSet> {
    if subset.labels.is_empty() {
        return Err(ChannelError::Empty);
    }
    let rows: Vec<usize> = subset
        .labels
        .iter()
        .map(|l| {
            epochs
                .channel_labels
                .iter()
                .position(|c| c == l)
                .ok_or_else(|| ChannelError::UnknownChannel(l.clone()))
        })
        .collect::<Result<_>>()?;
    let t = epochs.n_times;
    let mut out = EpochSet::empty(subset.labels.clone(), t, epochs.sampling_rate);
    out.data.reserve(epochs.len() * rows.len() * t);
    for e in 0..epochs.len() {
        let ep = epochs.epoch(e);
        for &r in &rows {
            out.data.extend_from_slice(&ep[r * t..(r + 1) * t]);
        }
    }
    out.labels = epochs.labels.clone();
    out.provenance = epochs.provenance.clone();
    Ok(out)
}

/// How many rankings place each channel in their top `k`. Every channel
/// of the first ranking appears in the map, with zero if never selected.
pub fn aggregate_rankings(rankings: &[ChannelRanking], k: usize) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    if let Some(first) = rankings.first() {
        for l in &first.order {
            counts.insert(l.clone(), 0);
        }
    }
    for r in rankings {
        for l in r.order.iter().take(k) {
            *counts.entry(l.clone()).or_default() += 1;
        }
    }
    counts
}

/// Channels of `montage` not in `exclude`, taken in montage order, at most
/// `n` of them; with `prefer_far_from`, farthest (on the sphere) first.
pub fn disjoint_channels(
    montage: &MontageLayout,
    exclude: &[String],
    n: usize,
    prefer_far_from: bool,
) -> Vec<String> {
    let excluded: Vec<&MontageEntry> = montage
        .entries
        .iter()
        .filter(|e| exclude.contains(&e.label))
        .collect();
    let mut candidates: Vec<(f64, usize, &MontageEntry)> = montage
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| !exclude.contains(&e.label))
        .map(|(i, e)| {
            let d = excluded
                .iter()
                .map(|x| {
                    let dot: f64 = (0..3).map(|j| x.position[j] * e.position[j]).sum();
                    dot.clamp(-1.0, 1.0).acos()
                })
                .fold(f64::INFINITY, f64::min);
            (d, i, e)
        })
        .collect();
    if prefer_far_from {
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    }
    let mut picked: Vec<(usize, String)> = candidates
        .into_iter()
        .take(n)
        .map(|(_, i, e)| (i, e.label.clone()))
        .collect();
    picked.sort();
    picked.into_iter().map(|(_, l)| l).collect()
}
