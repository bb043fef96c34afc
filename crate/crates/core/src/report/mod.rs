//! Experiment orchestration, figure rendering and metric export.

mod config;
mod export;
mod pipeline;
mod svg;

pub use config::{
    DataConfig, DataSource, ExperimentConfig, ExplainConfig, OutputConfig, PreprocessConfig,
    TrainConfig, THREADS_ENV,
};
pub use export::{export_metrics, read_table_csv, ExportedFiles};
pub use pipeline::{
    class_figures, collect_metrics, explain_subject, load_subject, mean_tfr, prepare_split,
    render_reports, report_from_workspace, run_pipeline, select_subset, train_scenario, Artifact,
    RunManifest, ScenarioRecord, ScenarioRun, StageFailure, SubjectData, SubjectRecord, Workspace,
};
pub use svg::{
    highlighted, idw, render_montage, render_tfr, render_topomap, topomap_at_electrodes,
    topomap_grid, TopoGrid, TOPO_RADIUS,
};

use crate::channels::ChannelError;
use crate::dsp::DspError;
use crate::edf::fetch::FetchError;
use crate::edf::EdfError;
use crate::explain::ExplainError;
use crate::model::ModelError;
use crate::stats::{Scenario, StatsError};
use crate::synth::SynthError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("channel `{0}` is not in the montage")]
    UnknownChannel(String),
    #[error("a topography needs at least 3 channels, got {0}")]
    TooFewChannels(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("subject {subject}: scenario {scenario} needs {needs}")]
    Dependency {
        subject: u32,
        scenario: Scenario,
        needs: String,
    },
    #[error("subject {subject}: {detail}")]
    Data { subject: u32, detail: String },
    #[error(transparent)]
    Edf(#[from] EdfError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("serialization failed: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ReportError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}
