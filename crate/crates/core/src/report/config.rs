//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ReportError, Result};
use crate::edf::fetch::{default_data_root, DEFAULT_BASE_URL};
use crate::explain::RelevanceSource;
use crate::model::{ConformerConfig, TEMPORAL_CONV_HOOK};
use crate::stats::Scenario;
use crate::synth::SynthSpec;
use crate::tensor::RngState;
use crate::training::Hyperparams;

/// Environment variable bounding the subject worker pool.
pub const THREADS_ENV: &str = "NEUROCAM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// EDF recordings under `data.root`.
    Physionet,
    /// Generated from `[synth]`; one independent draw per subject id.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Dataset root; unset means `NEUROCAM_DATA_ROOT`, else `./data`.
    pub root: Option<PathBuf>,
    pub subjects: Vec<u32>,
    /// Runs read per subject (imagined left/right fist by default).
    pub runs: Vec<u32>,
    pub base_url: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Physionet,
            root: None,
            subjects: vec![42],
            runs: vec![4, 8, 12],
            base_url: DEFAULT_BASE_URL.to_string(),
        }
    }
}

impl DataConfig {
    pub fn root(&self) -> PathBuf {
        self.root.clone().unwrap_or_else(default_data_root)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub filter_order: usize,
    pub window_seconds: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            band_low: 8.0,
            band_high: 30.0,
            filter_order: 4,
            window_seconds: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Fraction of each class's trials held out for testing.
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hp = Hyperparams::default();
        Self {
            learning_rate: hp.learning_rate,
            beta1: hp.beta1,
            beta2: hp.beta2,
            adam_eps: hp.adam_eps,
            batch_size: hp.batch_size,
            epochs: hp.epochs,
            weight_decay: hp.weight_decay,
            test_fraction: 0.25,
        }
    }
}

impl TrainConfig {
    pub fn hyperparams(&self, seed: RngState) -> Hyperparams {
        Hyperparams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    pub source: RelevanceSource,
    /// Hooked activation; only the temporal convolution is exposed.
    pub layer: String,
    pub top_k: usize,
    pub correct_only: bool,
    /// Share of samples marked relevant in the temporal windows.
    pub top_fraction: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            source: RelevanceSource::GradCam,
            layer: TEMPORAL_CONV_HOOK.to_string(),
            top_k: 10,
            correct_only: true,
            top_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Electrodes outlined in montage figures.
    pub highlight_k: usize,
    pub topo_grid: usize,
    /// Subject worker bound; unset means `NEUROCAM_THREADS`, else all cores.
    pub threads: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            highlight_k: 10,
            topo_grid: 64,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    /// `n_channels`/`n_times` are taken from the data.
    pub model: ConformerConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenarios: Scenario::ALL.to_vec(),
            data: DataConfig::default(),
            synth: SynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            model: ConformerConfig::default(),
            train: TrainConfig::default(),
            explain: ExplainConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale preset on generated data: a narrow model that trains in
    /// well under a minute per scenario on one core.
    pub fn synthetic() -> Self {
        Self {
            data: DataConfig {
                source: DataSource::Synthetic,
                subjects: vec![1],
                ..DataConfig::default()
            },
            model: ConformerConfig {
                n_feature_maps: 8,
                heads: 2,
                ..ConformerConfig::default()
            },
            train: TrainConfig {
                learning_rate: 1e-2,
                epochs: 30,
                ..TrainConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| ReportError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ReportError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| ReportError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ReportError::Config(m));
        if self.explain.layer != TEMPORAL_CONV_HOOK {
            return bad(format!(
                "explain.layer `{}`: only `{TEMPORAL_CONV_HOOK}` is hooked",
                self.explain.layer
            ));
        }
        if self.explain.top_k == 0 {
            return bad("explain.top_k must be positive".into());
        }
        if !(self.explain.top_fraction > 0.0 && self.explain.top_fraction <= 1.0) {
            return bad(format!(
                "explain.top_fraction {}",
                self.explain.top_fraction
            ));
        }
        if !(self.train.test_fraction > 0.0 && self.train.test_fraction < 1.0) {
            return bad(format!("train.test_fraction {}", self.train.test_fraction));
        }
        if !(self.preprocess.window_seconds > 0.0) {
            return bad(format!(
                "preprocess.window_seconds {}",
                self.preprocess.window_seconds
            ));
        }
        if self.output.topo_grid < 2 {
            return bad(format!("output.topo_grid {}", self.output.topo_grid));
        }
        if self.output.threads == Some(0) {
            return bad("output.threads must be positive".into());
        }
        let mut seen = Vec::new();
        for s in &self.scenarios {
            if seen.contains(s) {
                return bad(format!("scenario {s} listed twice"));
            }
            seen.push(*s);
        }
        Ok(())
    }

    /// Worker bound: config, then `NEUROCAM_THREADS`, else `None`.
    pub fn threads(&self) -> Option<usize> {
        self.output.threads.or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()?
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
        })
    }

    /// Per-subject random stream.
    pub fn subject_seed(&self, subject: u32) -> RngState {
        RngState::new(self.seed).derive(u64::from(subject))
    }
}
