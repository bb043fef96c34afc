//! Per-subject stages and the end-to-end run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig};
use super::svg::{render_montage, render_tfr, render_topomap};
use super::{export_metrics, io_err, ReportError, Result};
use crate::channels::{
    aggregate_rankings, mi_channels, subset_epochs, top_k_union, ChannelSubset, MontageLayout,
    SubsetOrigin,
};
use crate::dsp::{
    default_freqs, default_n_cycles, design_bandpass, epochs_from_recording, filter_recording,
    morlet_tfr, zscore_normalize, EpochSet, Tfr,
};
use crate::edf::fetch::{digest, run_path};
use crate::edf::{extract_trials, normalize_channel_label, read_edf_file, ClassLabel};
use crate::explain::{
    explain_class, mean_relevance, temporal_relevance, ChannelRanking, ClassExplanation,
    ExplainOptions,
};
use crate::model::{Conformer, ConformerConfig};
use crate::stats::{chance_level, summarize_table, Scenario, ScenarioTable};
use crate::synth::{generate, GroundTruth, SynthSpec};
use crate::training::{
    evaluate, save_history, split_dataset, train, write_metrics_csv, write_metrics_json,
    MetricsRow, SubjectMetrics, TrainHistory,
};

// Stream tags under the per-subject seed.
const SYNTH_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;
const TRAIN_STREAM: u64 = 4;

fn scenario_tag(s: Scenario) -> u64 {
    match s {
        Scenario::All64 => 0,
        Scenario::GradcamUnion => 1,
        Scenario::Mi21 => 2,
    }
}

/// Epochs of one subject (montage channel order) and, for generated data,
/// the planted ground truth.
#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject: u32,
    pub epochs: EpochSet,
    pub truth: Option<GroundTruth>,
}

/// Generated data, or the configured runs read from disk, band-passed,
/// windowed and reordered to the bundled montage.
pub fn load_subject(cfg: &ExperimentConfig, subject: u32) -> Result<SubjectData> {
    match cfg.data.source {
        DataSource::Synthetic => {
            let spec = SynthSpec {
                subject_id: subject,
                seed: cfg.subject_seed(subject).derive(SYNTH_STREAM).seed,
                ..cfg.synth.clone()
            };
            let (epochs, truth) = generate(&spec)?;
            Ok(SubjectData {
                subject,
                epochs,
                truth: Some(truth),
            })
        }
        DataSource::Physionet => load_recordings(cfg, subject),
    }
}

fn load_recordings(cfg: &ExperimentConfig, subject: u32) -> Result<SubjectData> {
    let root = cfg.data.root();
    let pp = &cfg.preprocess;
    let mut all: Option<EpochSet> = None;
    for &run in &cfg.data.runs {
        let path = root.join(run_path(subject, run));
        let mut rec = read_edf_file(&path)?;
        rec.subject_id = subject;
        rec.run_id = run;
        rec.channel_labels = rec
            .channel_labels
            .iter()
            .map(|l| normalize_channel_label(l))
            .collect();
        let filter = design_bandpass(
            pp.band_low,
            pp.band_high,
            rec.sampling_rate,
            pp.filter_order,
        )?;
        let filtered = filter_recording(&filter, &rec)?;
        let trials = extract_trials(&filtered);
        let set = epochs_from_recording(&filtered, &trials.trials, pp.window_seconds)?;
        match &mut all {
            None => all = Some(set),
            Some(a) => a.extend(&set)?,
        }
    }
    let epochs = all.ok_or_else(|| ReportError::Data {
        subject,
        detail: "no runs configured".into(),
    })?;
    if epochs.is_empty() {
        return Err(ReportError::Data {
            subject,
            detail: "no task trials found".into(),
        });
    }
    let montage = MontageLayout::bundled();
    let order = ChannelSubset::manual(montage.labels(), &montage, "montage order")?;
    Ok(SubjectData {
        subject,
        epochs: subset_epochs(&epochs, &order)?,
        truth: None,
    })
}

/// Trial-grouped stratified split, z-scored with training statistics.
pub fn prepare_split(cfg: &ExperimentConfig, data: &SubjectData) -> Result<(EpochSet, EpochSet)> {
    let seed = cfg.subject_seed(data.subject).derive(SPLIT_STREAM);
    let (train_set, test_set) = split_dataset(&data.epochs, cfg.train.test_fraction, seed)?;
    let (train_set, stats) = zscore_normalize(&train_set, None)?;
    let (test_set, _) = zscore_normalize(&test_set, Some(&stats))?;
    Ok((train_set, test_set))
}

/// One trained scenario of one subject.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub subset: ChannelSubset,
    pub model: Conformer,
    pub history: TrainHistory,
    pub metrics: SubjectMetrics,
}

/// Trains a fresh model on `subset` of the prepared epochs and evaluates it
/// on the matching test channels.
pub fn train_scenario(
    cfg: &ExperimentConfig,
    subject: u32,
    scenario: Scenario,
    subset: &ChannelSubset,
    train_set: &EpochSet,
    test_set: &EpochSet,
) -> Result<ScenarioRun> {
    let tr = subset_epochs(train_set, subset)?;
    let te = subset_epochs(test_set, subset)?;
    let model_cfg = ConformerConfig {
        n_channels: tr.n_channels,
        n_times: tr.n_times,
        ..cfg.model.clone()
    };
    let seed = cfg.subject_seed(subject);
    let tag = scenario_tag(scenario);
    let model = Conformer::build(model_cfg, seed.derive(INIT_STREAM).derive(tag))?;
    let hp = cfg.train.hyperparams(seed.derive(TRAIN_STREAM).derive(tag));
    let (model, history) = train(model, &tr, &hp)?;
    let chance = chance_level(te.len() as u64, 0.05, 0.5)?;
    let metrics = evaluate(&model, &te, subject, chance)?;
    log::info!(
        "subject {subject} {scenario}: {} channels, test accuracy {:.2}% (chance {chance:.2}%)",
        subset.len(),
        metrics.overall_acc
    );
    Ok(ScenarioRun {
        scenario,
        subset: subset.clone(),
        model,
        history,
        metrics,
    })
}

/// Grad-CAM explanations of both classes on the test epochs.
pub fn explain_subject(
    cfg: &ExperimentConfig,
    model: &Conformer,
    test_set: &EpochSet,
) -> Result<Vec<ClassExplanation>> {
    let opts = ExplainOptions {
        source: cfg.explain.source,
        correct_only: cfg.explain.correct_only,
    };
    ClassLabel::ALL
        .iter()
        .map(|&c| Ok(explain_class(model, test_set, c, opts)?))
        .collect()
}

/// Channel subset of a scenario. The Grad-CAM union needs the rankings of
/// the all-channel model.
pub fn select_subset(
    cfg: &ExperimentConfig,
    subject: u32,
    scenario: Scenario,
    channel_labels: &[String],
    rankings: Option<&[ChannelRanking]>,
) -> Result<ChannelSubset> {
    match scenario {
        Scenario::All64 => Ok(ChannelSubset {
            labels: channel_labels.to_vec(),
            origin: SubsetOrigin::Manual,
            provenance: "all channels".into(),
        }),
        Scenario::GradcamUnion => match rankings {
            Some([left, right]) => Ok(top_k_union(
                left,
                right,
                cfg.explain.top_k.min(left.order.len()),
            )?),
            _ => Err(ReportError::Dependency {
                subject,
                scenario,
                needs: "per-class rankings from a completed all64 stage".into(),
            }),
        },
        Scenario::Mi21 => Ok(mi_channels(&MontageLayout::bundled())?),
    }
}

/// Time-averaged Morlet power of `channel` over `epochs`, 8–30 Hz.
pub fn mean_tfr(epochs: &EpochSet, indices: &[usize], channel: &str) -> Result<Tfr> {
    let row = epochs
        .channel_labels
        .iter()
        .position(|l| l == channel)
        .ok_or_else(|| ReportError::UnknownChannel(channel.to_string()))?;
    if indices.is_empty() {
        return Err(ReportError::InvalidArgument(
            "no epochs for the time-frequency map".into(),
        ));
    }
    let freqs = default_freqs();
    let cycles = default_n_cycles(&freqs);
    let t = epochs.n_times;
    let mut acc: Option<Tfr> = None;
    for &i in indices {
        let x = &epochs.epoch(i)[row * t..(row + 1) * t];
        let tfr = morlet_tfr(x, epochs.sampling_rate, &freqs, &cycles)?;
        match &mut acc {
            None => acc = Some(tfr),
            Some(a) => {
                for (ra, rb) in a.power.iter_mut().zip(&tfr.power) {
                    for (va, vb) in ra.iter_mut().zip(rb) {
                        *va += vb;
                    }
                }
            }
        }
    }
    let mut tfr = acc.expect("at least one epoch");
    for row in &mut tfr.power {
        for v in row.iter_mut() {
            *v /= indices.len() as f64;
        }
    }
    tfr.channel = channel.to_string();
    Ok(tfr)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub kind: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub scenario: Scenario,
    pub channels: Vec<String>,
    pub overall_acc: f64,
    pub final_train_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject: u32,
    /// Root of this subject's random streams.
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub scenarios: Vec<ScenarioRecord>,
    /// Per-class top-k channels of the all-channel model.
    pub top_channels: BTreeMap<String, Vec<String>>,
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub source: DataSource,
    pub subjects: Vec<SubjectRecord>,
    pub artifacts: Vec<Artifact>,
}

/// Output directory layout and (de)serialization helpers.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn subject_dir(&self, subject: u32) -> Result<PathBuf> {
        let d = self.root.join(format!("S{subject:03}"));
        std::fs::create_dir_all(&d).map_err(io_err(&d))?;
        Ok(d)
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let text =
            serde_json::to_string_pretty(value).map_err(|e| ReportError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn read_json<T: DeserializeOwned>(&self, path: &Path) -> Result<T> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text)
            .map_err(|e| ReportError::Format(format!("{}: {e}", path.display())))
    }

    pub fn write_text(&self, path: &Path, text: &str) -> Result<()> {
        std::fs::write(path, text).map_err(io_err(path))
    }

    /// Digest entry for a file under the root.
    pub fn artifact(&self, path: &Path, kind: &str) -> Result<Artifact> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        Ok(Artifact {
            path: rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/"),
            kind: kind.to_string(),
            bytes: bytes.len() as u64,
            sha256: digest(&bytes),
        })
    }
}

/// Everything one subject produced, kept for the cross-subject reports.
struct SubjectOutcome {
    record: SubjectRecord,
    runs: Vec<ScenarioRun>,
    rankings: Option<Vec<ChannelRanking>>,
    artifacts: Vec<Artifact>,
}

fn run_subject(cfg: &ExperimentConfig, ws: &Workspace, subject: u32) -> SubjectOutcome {
    let mut out = SubjectOutcome {
        record: SubjectRecord {
            subject,
            seed: cfg.subject_seed(subject).seed,
            n_train: 0,
            n_test: 0,
            scenarios: Vec::new(),
            top_channels: BTreeMap::new(),
            failures: Vec::new(),
        },
        runs: Vec::new(),
        rankings: None,
        artifacts: Vec::new(),
    };
    let fail = |out: &mut SubjectOutcome, stage: &str, e: ReportError| {
        log::error!("subject {subject}: {stage} failed: {e}");
        out.record.failures.push(StageFailure {
            stage: stage.to_string(),
            error: e.to_string(),
        });
    };
    let prepared = load_subject(cfg, subject).and_then(|d| Ok((prepare_split(cfg, &d)?, d)));
    let ((train_set, test_set), data) = match prepared {
        Ok(p) => p,
        Err(e) => {
            fail(&mut out, "preprocess", e);
            return out;
        }
    };
    out.record.n_train = train_set.len();
    out.record.n_test = test_set.len();
    if let Err(e) = subject_artifacts(cfg, ws, &data, &train_set, &test_set, &mut out) {
        fail(&mut out, "artifacts", e);
    }
    out
}

fn subject_artifacts(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    data: &SubjectData,
    train_set: &EpochSet,
    test_set: &EpochSet,
    out: &mut SubjectOutcome,
) -> Result<()> {
    let subject = data.subject;
    let dir = ws.subject_dir(subject)?;
    if let Some(truth) = &data.truth {
        let p = dir.join("truth.json");
        truth.save(&p)?;
        out.artifacts.push(ws.artifact(&p, "ground_truth")?);
    }
    let montage = MontageLayout::bundled();
    for &scenario in &cfg.scenarios {
        let stage = format!("train:{scenario}");
        let result = select_subset(
            cfg,
            subject,
            scenario,
            &train_set.channel_labels,
            out.rankings.as_deref(),
        )
        .and_then(|subset| train_scenario(cfg, subject, scenario, &subset, train_set, test_set));
        let run = match result {
            Ok(r) => r,
            Err(e) => {
                log::error!("subject {subject}: {stage} failed: {e}");
                out.record.failures.push(StageFailure {
                    stage,
                    error: e.to_string(),
                });
                continue;
            }
        };
        let model_path = dir.join(format!("model_{scenario}.bin"));
        run.model.save(&model_path)?;
        out.artifacts.push(ws.artifact(&model_path, "model")?);
        let hist_path = dir.join(format!("history_{scenario}.json"));
        save_history(&run.history, &hist_path)?;
        let metrics_path = dir.join(format!("metrics_{scenario}.json"));
        ws.write_json(&metrics_path, &run.metrics)?;
        let subset_path = dir.join(format!("subset_{scenario}.json"));
        ws.write_json(&subset_path, &run.subset)?;
        out.artifacts
            .push(ws.artifact(&subset_path, "channel_subset")?);
        out.record.scenarios.push(ScenarioRecord {
            scenario,
            channels: run.subset.labels.clone(),
            overall_acc: run.metrics.overall_acc,
            final_train_acc: run.history.final_train_acc,
        });

        if scenario == Scenario::All64 {
            let stage = "explain";
            match explain_subject(cfg, &run.model, test_set) {
                Ok(expl) => {
                    for ex in &expl {
                        let class = ex.class_label.name();
                        let p = dir.join(format!("ranking_{class}.csv"));
                        ex.ranking.write_csv(&p)?;
                        out.artifacts.push(ws.artifact(&p, "ranking")?);
                        out.record.top_channels.insert(
                            class.to_string(),
                            ex.ranking.top(cfg.explain.top_k).to_vec(),
                        );
                        class_figures(
                            cfg,
                            ws,
                            &montage,
                            subject,
                            test_set,
                            ex,
                            &mut out.artifacts,
                        )?;
                    }
                    let rankings: Vec<ChannelRanking> =
                        expl.into_iter().map(|e| e.ranking).collect();
                    ws.write_json(&dir.join("rankings.json"), &rankings)?;
                    out.rankings = Some(rankings);
                }
                Err(e) => out.record.failures.push(StageFailure {
                    stage: stage.into(),
                    error: e.to_string(),
                }),
            }
        }
        out.runs.push(run);
    }
    Ok(())
}

/// CAT topography and time-frequency map of one class, written to the
/// workspace root.
pub fn class_figures(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    montage: &MontageLayout,
    subject: u32,
    test_set: &EpochSet,
    ex: &ClassExplanation,
    artifacts: &mut Vec<Artifact>,
) -> Result<()> {
    let class = ex.class_label.name();
    let values: BTreeMap<String, f64> = ex.ranking.scores.iter().cloned().collect();
    let cat = render_topomap(
        &values,
        montage,
        cfg.output.topo_grid,
        &format!("Subject {subject}: class activation topography, {class}"),
    )?;
    let p = ws.root.join(format!("cat_{subject}_{class}.svg"));
    ws.write_text(&p, &cat)?;
    artifacts.push(ws.artifact(&p, "figure")?);

    let channel = &ex.ranking.order[0];
    let indices: Vec<usize> = (0..test_set.len())
        .filter(|&i| test_set.labels[i] == ex.class_label)
        .collect();
    let tfr = mean_tfr(test_set, &indices, channel)?;
    let relevance = mean_relevance(&ex.maps, cfg.explain.source)?;
    let windows = temporal_relevance(
        &relevance,
        test_set.n_channels,
        test_set.n_times,
        test_set.sampling_rate,
        cfg.explain.top_fraction,
    )?;
    let svg = render_tfr(
        &tfr,
        &windows,
        &format!("Subject {subject}: {class}, {channel}, 8–30 Hz"),
    )?;
    let p = ws.root.join(format!("tfr_{subject}_{class}.svg"));
    ws.write_text(&p, &svg)?;
    artifacts.push(ws.artifact(&p, "figure")?);
    Ok(())
}

/// Metrics rows in subject, then scenario order.
pub fn collect_metrics(runs: &[(u32, Vec<ScenarioRun>)]) -> Vec<MetricsRow> {
    let mut rows: Vec<MetricsRow> = runs
        .iter()
        .flat_map(|(_, rs)| {
            rs.iter().map(|r| MetricsRow {
                scenario: r.scenario.name().to_string(),
                metrics: r.metrics.clone(),
            })
        })
        .collect();
    rows.sort_by_key(|r| {
        (
            r.metrics.subject_id,
            Scenario::from_name(&r.scenario).map(scenario_tag),
        )
    });
    rows
}

/// Cross-subject outputs: metric files, aggregate rankings, montage figures
/// and the statistics summary.
pub fn render_reports(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    rows: &[MetricsRow],
    rankings: &[(u32, Vec<ChannelRanking>)],
    subsets: &[(u32, Scenario, ChannelSubset)],
) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    let p = ws.root.join("metrics.csv");
    write_metrics_csv(&p, rows)?;
    artifacts.push(ws.artifact(&p, "metrics")?);
    let p = ws.root.join("metrics.json");
    write_metrics_json(&p, rows)?;
    artifacts.push(ws.artifact(&p, "metrics")?);
    for &scenario in &cfg.scenarios {
        let sc_rows: Vec<MetricsRow> = rows
            .iter()
            .filter(|r| r.scenario == scenario.name())
            .cloned()
            .collect();
        let p = ws.root.join(format!("metrics_{scenario}.csv"));
        write_metrics_csv(&p, &sc_rows)?;
        artifacts.push(ws.artifact(&p, "scenario_metrics")?);
    }

    let table = ScenarioTable::from_metrics(rows)?;
    let files = export_metrics(&table, &ws.root, "table")?;
    artifacts.push(ws.artifact(&files.csv, "table")?);
    artifacts.push(ws.artifact(&files.json, "table")?);
    if !table.rows.is_empty() {
        let summary = summarize_table(&table, 0.05)?;
        let p = ws.root.join("summary.txt");
        ws.write_text(&p, &summary.to_string())?;
        artifacts.push(ws.artifact(&p, "summary")?);
        let p = ws.root.join("summary.json");
        ws.write_json(&p, &summary)?;
        artifacts.push(ws.artifact(&p, "summary")?);
    }

    // Mean channel scores across subjects, per class.
    for class in ClassLabel::ALL {
        let per_subject: Vec<&ChannelRanking> = rankings
            .iter()
            .filter_map(|(_, rs)| rs.iter().find(|r| r.class_label == class))
            .collect();
        let Some(first) = per_subject.first() else {
            continue;
        };
        let scores = first
            .scores
            .iter()
            .map(|(l, _)| {
                let s = per_subject.iter().filter_map(|r| r.score(l)).sum::<f64>()
                    / per_subject.len() as f64;
                (l.clone(), s)
            })
            .collect();
        let p = ws.root.join(format!("ranking_{}.csv", class.name()));
        ChannelRanking::from_scores(class, scores).write_csv(&p)?;
        artifacts.push(ws.artifact(&p, "ranking")?);
    }

    let montage = MontageLayout::bundled();
    for &scenario in &cfg.scenarios {
        let (values, k): (BTreeMap<String, f64>, usize) = match scenario {
            Scenario::All64 => {
                let all: Vec<ChannelRanking> = rankings
                    .iter()
                    .flat_map(|(_, r)| r.iter().cloned())
                    .collect();
                if all.is_empty() {
                    continue;
                }
                let counts = aggregate_rankings(&all, cfg.explain.top_k);
                (
                    counts.into_iter().map(|(l, c)| (l, c as f64)).collect(),
                    cfg.output.highlight_k,
                )
            }
            _ => {
                let mut counts: BTreeMap<String, f64> = BTreeMap::new();
                let mut widest = 0;
                for (_, _, s) in subsets.iter().filter(|(_, sc, _)| *sc == scenario) {
                    widest = widest.max(s.len());
                    for l in &s.labels {
                        *counts.entry(l.clone()).or_default() += 1.0;
                    }
                }
                if counts.is_empty() {
                    continue;
                }
                (counts, widest)
            }
        };
        let title = match scenario {
            Scenario::All64 => format!("Top-{} Grad-CAM channel frequency", cfg.explain.top_k),
            Scenario::GradcamUnion => "Grad-CAM union channels".to_string(),
            Scenario::Mi21 => "Motor-cortex channels".to_string(),
        };
        let svg = render_montage(&values, &montage, k, &title)?;
        let p = ws.root.join(format!("montage_{scenario}.svg"));
        ws.write_text(&p, &svg)?;
        artifacts.push(ws.artifact(&p, "figure")?);
    }
    Ok(artifacts)
}

/// Rebuilds the cross-subject reports from what earlier stages left in the
/// workspace (`S###/metrics_*.json`, `rankings.json`, `subset_*.json`).
pub fn report_from_workspace(cfg: &ExperimentConfig, ws: &Workspace) -> Result<Vec<Artifact>> {
    let mut rows = Vec::new();
    let mut rankings = Vec::new();
    let mut subsets = Vec::new();
    for &subject in &cfg.data.subjects {
        let dir = ws.root.join(format!("S{subject:03}"));
        for &scenario in &cfg.scenarios {
            let m = dir.join(format!("metrics_{scenario}.json"));
            if m.exists() {
                rows.push(MetricsRow {
                    scenario: scenario.name().to_string(),
                    metrics: ws.read_json(&m)?,
                });
            }
            let s = dir.join(format!("subset_{scenario}.json"));
            if s.exists() && scenario != Scenario::All64 {
                subsets.push((subject, scenario, ws.read_json::<ChannelSubset>(&s)?));
            }
        }
        let r = dir.join("rankings.json");
        if r.exists() {
            rankings.push((subject, ws.read_json::<Vec<ChannelRanking>>(&r)?));
        }
    }
    rows.sort_by_key(|r| {
        (
            r.metrics.subject_id,
            Scenario::from_name(&r.scenario).map(scenario_tag),
        )
    });
    render_reports(cfg, ws, &rows, &rankings, &subsets)
}

/// preprocess → train(all64) → explain → select → retrain(subsets) →
/// stats → reports for every configured subject. Stage failures are
/// recorded per subject and the run continues.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let ws = Workspace::new(&cfg.output.dir)?;
    let config_text = cfg.to_toml()?;
    let p = ws.root.join("config.toml");
    ws.write_text(&p, &config_text)?;
    let mut artifacts = vec![ws.artifact(&p, "config")?];

    let work = || -> Vec<SubjectOutcome> {
        cfg.data
            .subjects
            .par_iter()
            .map(|&s| run_subject(cfg, &ws, s))
            .collect()
    };
    let outcomes = match cfg.threads() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ReportError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut subjects = Vec::new();
    let mut runs = Vec::new();
    let mut rankings = Vec::new();
    let mut subsets = Vec::new();
    for o in outcomes {
        artifacts.extend(o.artifacts);
        if let Some(r) = o.rankings {
            rankings.push((o.record.subject, r));
        }
        for r in &o.runs {
            subsets.push((o.record.subject, r.scenario, r.subset.clone()));
        }
        runs.push((o.record.subject, o.runs));
        subjects.push(o.record);
    }
    let rows = collect_metrics(&runs);
    artifacts.extend(render_reports(cfg, &ws, &rows, &rankings, &subsets)?);

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: digest(config_text.as_bytes()),
        source: cfg.data.source,
        subjects,
        artifacts,
    };
    ws.write_json(&ws.root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
