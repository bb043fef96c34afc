use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use neurocam::dsp::EpochSet;
use neurocam::edf::fetch::{fetch_subject, HttpTransport};
use neurocam::explain::ChannelRanking;
use neurocam::model::Conformer;
use neurocam::report::{
    class_figures, explain_subject, load_subject, prepare_split, report_from_workspace,
    run_pipeline, select_subset, train_scenario, DataSource, ExperimentConfig, SubjectData,
    Workspace,
};
use neurocam::stats::{summarize_table, Scenario, ScenarioTable};
use neurocam::synth::GroundTruth;

#[derive(Parser)]
#[command(
    name = "neurocam",
    version,
    about = "EEG motor-imagery decoding, Grad-CAM channel relevance and channel-selection experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated subject ids (overrides `data.subjects`).
    #[arg(long, global = true, value_delimiter = ',')]
    subjects: Option<Vec<u32>>,
    /// Restrict to one scenario: all64, gradcam17 (= gradcam_union) or mi21.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the synthetic preset instead of the recorded dataset when no
    /// config file is given.
    #[arg(long, global = true)]
    synthetic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Download and verify the configured runs.
    Fetch,
    /// Generate synthetic subjects (epochs plus planted ground truth).
    Synth,
    /// Filter and window recordings into `S###/epochs.bin`.
    Preprocess,
    /// Train the all-channel model.
    Train,
    /// Grad-CAM rankings and per-class figures from the all-channel model.
    Explain,
    /// Build the reduced channel subsets.
    Select,
    /// Train the reduced-channel scenarios.
    Retrain,
    /// Summarize metrics (or, with --bundled, the published table).
    Stats {
        #[arg(long)]
        bundled: bool,
    },
    /// Rebuild metric files and montage figures from earlier stages.
    Report,
    /// Every stage end to end.
    RunAll,
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None if c.synthetic => ExperimentConfig::synthetic(),
        None => ExperimentConfig::default(),
    };
    if let Some(s) = &c.subjects {
        cfg.data.subjects = s.clone();
    }
    if let Some(name) = &c.scenario {
        let sc = Scenario::from_name(name).with_context(|| format!("unknown scenario `{name}`"))?;
        cfg.scenarios = vec![sc];
    }
    if let Some(o) = &c.out {
        cfg.output.dir = o.clone();
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn subject_data(cfg: &ExperimentConfig, ws: &Workspace, subject: u32) -> Result<SubjectData> {
    let dir = ws.subject_dir(subject)?;
    let path = dir.join("epochs.bin");
    if path.exists() {
        let truth = dir.join("truth.json");
        return Ok(SubjectData {
            subject,
            epochs: EpochSet::load(&path)?,
            truth: if truth.exists() {
                Some(GroundTruth::load(&truth)?)
            } else {
                None
            },
        });
    }
    log::info!("subject {subject}: no saved epochs, loading from source");
    Ok(load_subject(cfg, subject)?)
}

fn save_subject(ws: &Workspace, data: &SubjectData) -> Result<()> {
    let dir = ws.subject_dir(data.subject)?;
    data.epochs.save(&dir.join("epochs.bin"))?;
    if let Some(t) = &data.truth {
        t.save(&dir.join("truth.json"))?;
    }
    println!(
        "subject {}: {} epochs × {} channels",
        data.subject,
        data.epochs.len(),
        data.epochs.n_channels
    );
    Ok(())
}

fn train_stage(
    cfg: &ExperimentConfig,
    ws: &Workspace,
    subject: u32,
    scenario: Scenario,
) -> Result<()> {
    let data = subject_data(cfg, ws, subject)?;
    let (train_set, test_set) = prepare_split(cfg, &data)?;
    let dir = ws.subject_dir(subject)?;
    let rankings_path = dir.join("rankings.json");
    let rankings: Option<Vec<ChannelRanking>> = if rankings_path.exists() {
        Some(ws.read_json(&rankings_path)?)
    } else {
        None
    };
    let subset_path = dir.join(format!("subset_{scenario}.json"));
    let subset = if subset_path.exists() && scenario != Scenario::All64 {
        ws.read_json(&subset_path)?
    } else {
        select_subset(
            cfg,
            subject,
            scenario,
            &train_set.channel_labels,
            rankings.as_deref(),
        )?
    };
    let run = train_scenario(cfg, subject, scenario, &subset, &train_set, &test_set)?;
    run.model.save(&dir.join(format!("model_{scenario}.bin")))?;
    ws.write_json(&dir.join(format!("history_{scenario}.json")), &run.history)?;
    ws.write_json(&dir.join(format!("metrics_{scenario}.json")), &run.metrics)?;
    ws.write_json(&subset_path, &run.subset)?;
    println!(
        "subject {subject} {scenario}: {} channels, test accuracy {:.2}% (chance {:.2}%)",
        run.subset.len(),
        run.metrics.overall_acc,
        run.metrics.chance_level
    );
    Ok(())
}

fn explain_stage(cfg: &ExperimentConfig, ws: &Workspace, subject: u32) -> Result<()> {
    let data = subject_data(cfg, ws, subject)?;
    let (_, test_set) = prepare_split(cfg, &data)?;
    let dir = ws.subject_dir(subject)?;
    let model_path = dir.join("model_all64.bin");
    if !model_path.exists() {
        bail!(
            "subject {subject}: {} missing; run `train` first",
            model_path.display()
        );
    }
    let model = Conformer::load(&model_path)?;
    let expl = explain_subject(cfg, &model, &test_set)?;
    let montage = neurocam::channels::MontageLayout::bundled();
    let mut artifacts = Vec::new();
    for ex in &expl {
        ex.ranking
            .write_csv(&dir.join(format!("ranking_{}.csv", ex.class_label.name())))?;
        class_figures(cfg, ws, &montage, subject, &test_set, ex, &mut artifacts)?;
        println!(
            "subject {subject} {}: top-{} {:?}",
            ex.class_label,
            cfg.explain.top_k,
            ex.ranking.top(cfg.explain.top_k)
        );
    }
    let rankings: Vec<ChannelRanking> = expl.into_iter().map(|e| e.ranking).collect();
    ws.write_json(&dir.join("rankings.json"), &rankings)?;
    Ok(())
}

fn select_stage(cfg: &ExperimentConfig, ws: &Workspace, subject: u32) -> Result<()> {
    let dir = ws.subject_dir(subject)?;
    let rankings_path = dir.join("rankings.json");
    let rankings: Option<Vec<ChannelRanking>> = if rankings_path.exists() {
        Some(ws.read_json(&rankings_path)?)
    } else {
        None
    };
    let labels = neurocam::channels::MontageLayout::bundled().labels();
    for &sc in cfg.scenarios.iter().filter(|&&s| s != Scenario::All64) {
        let subset = select_subset(cfg, subject, sc, &labels, rankings.as_deref())?;
        println!(
            "subject {subject} {sc}: {} channels {:?}",
            subset.len(),
            subset.labels
        );
        ws.write_json(&dir.join(format!("subset_{sc}.json")), &subset)?;
    }
    Ok(())
}

fn for_subjects(cfg: &ExperimentConfig, mut f: impl FnMut(u32) -> Result<()>) -> Result<()> {
    let mut failed = 0;
    for &s in &cfg.data.subjects {
        if let Err(e) = f(s) {
            eprintln!("subject {s}: {e:#}");
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} subjects failed", cfg.data.subjects.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(&cli.common)?;
    if let Some(n) = cfg.threads() {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }

    match cli.command {
        Command::Config => print!("{}", cfg.to_toml()?),
        Command::Fetch => {
            let root = cfg.data.root();
            let transport = HttpTransport::new(Duration::from_secs(60));
            for_subjects(&cfg, |s| {
                let report =
                    fetch_subject(s, &cfg.data.runs, &root, &cfg.data.base_url, &transport)?;
                println!(
                    "subject {s}: {} files ({} downloaded)",
                    report.files.len(),
                    report.downloaded
                );
                if let Some((file, e)) = report.failures.first() {
                    bail!("{} failures, first: {file}: {e}", report.failures.len());
                }
                Ok(())
            })?;
        }
        Command::Synth => {
            cfg.data.source = DataSource::Synthetic;
            let ws = Workspace::new(&cfg.output.dir)?;
            for_subjects(&cfg, |s| save_subject(&ws, &load_subject(&cfg, s)?))?;
        }
        Command::Preprocess => {
            let ws = Workspace::new(&cfg.output.dir)?;
            for_subjects(&cfg, |s| save_subject(&ws, &load_subject(&cfg, s)?))?;
        }
        Command::Train => {
            let ws = Workspace::new(&cfg.output.dir)?;
            for_subjects(&cfg, |s| train_stage(&cfg, &ws, s, Scenario::All64))?;
        }
        Command::Explain => {
            let ws = Workspace::new(&cfg.output.dir)?;
            for_subjects(&cfg, |s| explain_stage(&cfg, &ws, s))?;
        }
        Command::Select => {
            let ws = Workspace::new(&cfg.output.dir)?;
            for_subjects(&cfg, |s| select_stage(&cfg, &ws, s))?;
        }
        Command::Retrain => {
            let ws = Workspace::new(&cfg.output.dir)?;
            let scenarios: Vec<Scenario> = cfg
                .scenarios
                .iter()
                .copied()
                .filter(|&s| s != Scenario::All64)
                .collect();
            for_subjects(&cfg, |s| {
                scenarios
                    .iter()
                    .try_for_each(|&sc| train_stage(&cfg, &ws, s, sc))
            })?;
        }
        Command::Stats { bundled } => {
            let table = if bundled {
                ScenarioTable::bundled()
            } else {
                let ws = Workspace::new(&cfg.output.dir)?;
                report_from_workspace(&cfg, &ws)?;
                neurocam::report::read_table_csv(&ws.root.join("table.csv"))?
            };
            if table.rows.is_empty() {
                bail!("no metrics found under {}", cfg.output.dir.display());
            }
            print!("{}", summarize_table(&table, 0.05)?);
        }
        Command::Report => {
            let ws = Workspace::new(&cfg.output.dir)?;
            let artifacts = report_from_workspace(&cfg, &ws)?;
            for a in artifacts {
                println!("{}  {}", a.sha256, a.path);
            }
        }
        Command::RunAll => {
            let manifest = run_pipeline(&cfg)?;
            for s in &manifest.subjects {
                for r in &s.scenarios {
                    println!(
                        "subject {} {}: {} channels, test accuracy {:.2}%",
                        s.subject,
                        r.scenario,
                        r.channels.len(),
                        r.overall_acc
                    );
                }
                for f in &s.failures {
                    eprintln!("subject {} {}: {}", s.subject, f.stage, f.error);
                }
            }
            println!(
                "{} artifacts, manifest at {}",
                manifest.artifacts.len(),
                cfg.output.dir.join("manifest.json").display()
            );
            if manifest.subjects.iter().any(|s| !s.failures.is_empty()) {
                bail!("some stages failed; see manifest.json");
            }
        }
    }
    Ok(())
}
