//! End-to-end acceptance checks, one PASS/FAIL/SKIP line per criterion.
//!
//! Runs as a plain binary (`harness = false`); the exit status is non-zero
//! if any criterion fails. Set `NEUROCAM_ACCEPTANCE_NETWORK=1` to run the
//! network smoke test (criterion 10); it is skipped otherwise.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use neurocam::channels::{
    disjoint_channels, mi_channels, top_k_union, ChannelSubset, MontageLayout,
};
use neurocam::dsp::{
    default_freqs, default_n_cycles, design_bandpass, filter_zero_phase, morlet_tfr,
};
use neurocam::edf::fetch::{fetch_subject, HttpTransport};
use neurocam::edf::{parse_edf, serialize_edf, ClassLabel, Recording};
use neurocam::explain::ChannelRanking;
use neurocam::report::{
    explain_subject, load_subject, prepare_split, run_pipeline, select_subset, train_scenario,
    ExperimentConfig,
};
use neurocam::stats::{
    chance_level, majority_baseline, mean, select_participants, summarize_table,
    wilcoxon_signed_rank, PairedSample, Scenario, ScenarioTable, WilcoxonMethod,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn close(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol + 1e-9
}

// 1 ---------------------------------------------------------------------

fn table_aggregates() -> Outcome {
    let s = summarize_table(&ScenarioTable::bundled(), 0.05).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (sc, m, sd) in [
        (Scenario::All64, 72.60, 4.54),
        (Scenario::GradcamUnion, 66.63, 5.68),
        (Scenario::Mi21, 70.85, 5.35),
    ] {
        let c = s
            .columns
            .iter()
            .find(|c| c.scenario == sc && c.column == "overall")
            .unwrap();
        ok &= close(c.mean, m, 0.01) && close(c.sd, sd, 0.01);
        parts.push(format!("{sc} {:.2}±{:.3}", c.mean, c.sd));
    }
    for (a, b, d) in [
        (Scenario::All64, Scenario::GradcamUnion, 5.97),
        (Scenario::All64, Scenario::Mi21, 1.75),
        (Scenario::Mi21, Scenario::GradcamUnion, 4.22),
    ] {
        let c = s.comparisons.iter().find(|c| c.a == a && c.b == b).unwrap();
        ok &= close(c.mean_difference, d, 0.01);
        parts.push(format!("{a}−{b} {:.4}", c.mean_difference));
    }
    verdict(ok, parts.join(", "))
}

// 2 ---------------------------------------------------------------------

fn wilcoxon() -> Outcome {
    let t = ScenarioTable::bundled();
    let pair = |a, b| {
        PairedSample::new(
            t.subjects(),
            t.column(a, |x| x.overall).unwrap(),
            t.column(b, |x| x.overall).unwrap(),
        )
        .unwrap()
    };
    let s1 = pair(Scenario::All64, Scenario::GradcamUnion);
    let s2 = pair(Scenario::All64, Scenario::Mi21);
    let r1 = wilcoxon_signed_rank(&s1).unwrap();
    let r2 = wilcoxon_signed_rank(&s2).unwrap();
    let (_, _, o1) = common::wilcoxon::brute_force(&s1.a, &s1.b);
    let (_, _, o2) = common::wilcoxon::brute_force(&s2.a, &s2.b);
    let summary = summarize_table(&t, 0.05).unwrap();
    let sig = |a, b| {
        summary
            .comparisons
            .iter()
            .find(|c| c.a == a && c.b == b)
            .unwrap()
            .significant
    };
    let ok = r1.method == WilcoxonMethod::Exact
        && r1.p_two_sided <= 0.005
        && sig(Scenario::All64, Scenario::GradcamUnion)
        && r2.p_two_sided > 0.05
        && !sig(Scenario::All64, Scenario::Mi21)
        && (r1.p_two_sided - o1).abs() < 1e-12
        && (r2.p_two_sided - o2).abs() < 1e-12;
    verdict(
        ok,
        format!(
            "all64 vs gradcam17 p={:.5} (oracle Δ {:.1e}), all64 vs mi21 p={:.4} (oracle Δ {:.1e})",
            r1.p_two_sided,
            (r1.p_two_sided - o1).abs(),
            r2.p_two_sided,
            (r2.p_two_sided - o2).abs()
        ),
    )
}

// 3 ---------------------------------------------------------------------

fn participant_screen() -> Outcome {
    let t = ScenarioTable::bundled();
    let kept = select_participants(&t.metrics(Scenario::All64).unwrap(), 10.0);
    verdict(
        kept == t.subjects() && kept.len() == 16,
        format!("{} of {} retained", kept.len(), t.rows.len()),
    )
}

// 4 ---------------------------------------------------------------------

fn channel_sets() -> Outcome {
    let montage = MontageLayout::bundled();
    let labels = montage.labels();
    // Left top-10 = labels 0..10; right top-10 = labels 7..17 (3 shared).
    let ranking = |class, top: std::ops::Range<usize>| {
        let scores = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                (
                    l.clone(),
                    if top.contains(&i) {
                        100.0 - i as f64
                    } else {
                        0.0
                    },
                )
            })
            .collect();
        ChannelRanking::from_scores(class, scores)
    };
    let left = ranking(ClassLabel::Left, 0..10);
    let right = ranking(ClassLabel::Right, 7..17);
    let shared = left
        .top(10)
        .iter()
        .filter(|l| right.top(10).contains(l))
        .count();
    let union = top_k_union(&left, &right, 10).unwrap();
    let mi = mi_channels(&montage).unwrap();
    verdict(
        shared == 3 && union.len() == 17 && mi.len() == 21,
        format!(
            "shared {shared}, |union| {}, |mi| {}",
            union.len(),
            mi.len()
        ),
    )
}

// 5 ---------------------------------------------------------------------

fn gradients() -> Outcome {
    use common::gradients::{full_model_grad_check, worst_over_seeds, PRIMITIVES, TOL};
    let mut worst = (0.0f64, "");
    for &(name, f) in PRIMITIVES {
        let (err, _) = worst_over_seeds(10, f);
        if err > worst.0 {
            worst = (err, name);
        }
    }
    let desk = ExperimentConfig::synthetic().model;
    let mut model_worst = 0.0f64;
    for seed in 0..10 {
        match full_model_grad_check(desk.clone(), seed, 3) {
            Ok(e) => model_worst = model_worst.max(e),
            Err(msg) => return Outcome::Fail(format!("desk-scale model {msg}")),
        }
    }
    verdict(
        worst.0 < TOL && model_worst < TOL,
        format!(
            "{} primitives worst {:.1e} ({}), desk-scale model worst {:.1e}, 10 seeds each",
            PRIMITIVES.len(),
            worst.0,
            worst.1,
            model_worst
        ),
    )
}

// 6 ---------------------------------------------------------------------

fn gap_oracle() -> Outcome {
    let (mut w, mut m) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let (a, b) = common::gap::gap_oracle_errors(seed);
        w = w.max(a);
        m = m.max(b);
    }
    verdict(
        w < 1e-9 && m < 1e-12,
        format!("weight error {w:.1e}, map error {m:.1e}"),
    )
}

// 7 ---------------------------------------------------------------------

const FS: f64 = 160.0;

fn sine(freq: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
        .collect()
}

/// Least-squares amplitude of a sinusoid at `freq`, skipping the edges.
fn fitted_amplitude(x: &[f64], freq: f64, skip: usize) -> f64 {
    let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate().take(x.len() - skip).skip(skip) {
        let (s, c) = (2.0 * PI * freq * i as f64 / FS).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        xs += v * s;
        xc += v * c;
    }
    let det = ss * cc - sc * sc;
    ((xs * cc - xc * sc) / det).hypot((xc * ss - xs * sc) / det)
}

fn dsp_properties() -> Outcome {
    let spec = design_bandpass(8.0, 30.0, FS, 4).unwrap();
    let skip = FS as usize;
    let gain_db = |f: f64| {
        let y = filter_zero_phase(&spec, &sine(f, 1600)).unwrap();
        20.0 * fitted_amplitude(&y, f, skip).log10()
    };
    let (g2, g15, g50) = (gain_db(2.0), gain_db(15.0), gain_db(50.0));
    let mut ok = g2 <= -20.0 && g50 <= -20.0 && g15.abs() <= 1.0;

    let freqs = default_freqs();
    let cycles = default_n_cycles(&freqs);
    let mut peak_err = 0.0f64;
    for tone in [10.0, 12.0, 20.0, 28.0] {
        let tfr = morlet_tfr(&sine(tone, 160), FS, &freqs, &cycles).unwrap();
        peak_err = peak_err.max((tfr.peak_frequency().unwrap() - tone).abs());
    }
    ok &= peak_err <= 1.0;

    let mut steps = 0.0f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..4).map(|i| format!("E{i}")).collect();
        let samples = (0..4)
            .map(|_| (0..480).map(|_| rng.random_range(-250.0..250.0)).collect())
            .collect();
        let rec = Recording::new(FS, labels, samples);
        let back = parse_edf(&serialize_edf(&rec).unwrap()).unwrap();
        let header = back.header.as_ref().unwrap();
        for ((a, b), sig) in rec.samples.iter().zip(&back.samples).zip(&header.signals) {
            let q = sig.quantization_step();
            for (x, y) in a.iter().zip(b) {
                steps = steps.max((x - y).abs() / q);
            }
        }
    }
    ok &= steps <= 1.0;
    verdict(
        ok,
        format!(
            "2 Hz {g2:.1} dB, 50 Hz {g50:.1} dB, 15 Hz {g15:.2} dB; Morlet peak error {peak_err} Hz; EDF {steps:.2} steps"
        ),
    )
}

// 8 ---------------------------------------------------------------------

struct SeedResult {
    all64: f64,
    own_in_top10: bool,
    union_acc: f64,
    disjoint_acc: f64,
    majority: f64,
    /// Worst rank (1-based) of each class's planted channels in its own map.
    own_rank: [usize; 2],
}

fn faithfulness_seed(seed: u64) -> SeedResult {
    let mut cfg = ExperimentConfig::synthetic();
    cfg.seed = seed;
    let montage = MontageLayout::bundled();
    let data = load_subject(&cfg, 1).unwrap();
    let (train, test) = prepare_split(&cfg, &data).unwrap();
    let all = select_subset(&cfg, 1, Scenario::All64, &train.channel_labels, None).unwrap();
    let run = train_scenario(&cfg, 1, Scenario::All64, &all, &train, &test).unwrap();
    let expl = explain_subject(&cfg, &run.model, &test).unwrap();

    let planted_for = |class| match class {
        ClassLabel::Left => &cfg.synth.erd_channels_left_class,
        ClassLabel::Right => &cfg.synth.erd_channels_right_class,
    };
    let mut own_in_top10 = true;
    let mut own_rank = [0; 2];
    for ex in &expl {
        let planted = planted_for(ex.class_label);
        let top = ex.ranking.top(10);
        own_in_top10 &= planted.iter().all(|c| top.contains(c));
        own_rank[ex.class_label.index()] = planted
            .iter()
            .map(|c| ex.ranking.order.iter().position(|l| l == c).unwrap() + 1)
            .max()
            .unwrap();
    }

    let mut union_labels = cfg.synth.erd_channels_left_class.clone();
    union_labels.extend(cfg.synth.erd_channels_right_class.iter().cloned());
    let union = ChannelSubset::manual(union_labels.clone(), &montage, "planted ERD union").unwrap();
    let union_run = train_scenario(&cfg, 1, Scenario::GradcamUnion, &union, &train, &test).unwrap();
    let far = disjoint_channels(&montage, &union_labels, 17, true);
    let disjoint = ChannelSubset::manual(far, &montage, "far from planted").unwrap();
    let disjoint_run = train_scenario(&cfg, 1, Scenario::Mi21, &disjoint, &train, &test).unwrap();

    SeedResult {
        all64: run.metrics.overall_acc,
        own_in_top10,
        union_acc: union_run.metrics.overall_acc,
        disjoint_acc: disjoint_run.metrics.overall_acc,
        majority: majority_baseline(&test.labels).unwrap(),
        own_rank,
    }
}

fn faithfulness() -> Outcome {
    let results: Vec<SeedResult> = (0..10).map(faithfulness_seed).collect();
    let col = |f: fn(&SeedResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    let acc = col(|r| r.all64);
    let union_loss = mean(&acc) - mean(&col(|r| r.union_acc));
    let disjoint_gap = mean(&col(|r| r.disjoint_acc)) - mean(&col(|r| r.majority));
    let own = results.iter().filter(|r| r.own_in_top10).count();
    let min_acc = acc.iter().cloned().fold(f64::INFINITY, f64::min);

    let checks = [
        ("accuracy", mean(&acc) >= 90.0),
        ("own planted in top-10", own >= 8),
        ("planted-union retrain", union_loss <= 5.0),
        ("disjoint retrain", disjoint_gap.abs() <= 10.0),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let ranks: Vec<String> = results
        .iter()
        .map(|r| format!("{}/{}", r.own_rank[0], r.own_rank[1]))
        .collect();
    let detail = format!(
        "all64 mean {:.1}% (min {min_acc:.1}%); own planted in top-10 {own}/10 seeds (worst own rank left/right: {}); \
         planted-union loss {union_loss:.1} pts; disjoint-17 {:.1}% vs majority {:.1}%{}",
        mean(&acc),
        ranks.join(" "),
        mean(&col(|r| r.disjoint_acc)),
        mean(&col(|r| r.majority)),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    verdict(failed.is_empty(), detail)
}

// 9 ---------------------------------------------------------------------

fn determinism() -> Outcome {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig::synthetic();
        cfg.output.dir = dir.path().to_path_buf();
        let manifest = run_pipeline(&cfg).unwrap();
        let csv = std::fs::read(dir.path().join("metrics.csv")).unwrap();
        (csv, manifest.subjects.iter().all(|s| s.failures.is_empty()))
    };
    let (a, ok_a) = run();
    let (b, ok_b) = run();
    verdict(
        a == b && ok_a && ok_b && !a.is_empty(),
        format!("metrics.csv {} bytes, identical: {}", a.len(), a == b),
    )
}

// 10 --------------------------------------------------------------------

fn network_smoke() -> Outcome {
    if std::env::var_os("NEUROCAM_ACCEPTANCE_NETWORK").is_none() {
        return Outcome::Skip("offline (set NEUROCAM_ACCEPTANCE_NETWORK=1 to run)".into());
    }
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.data.subjects = vec![42];
    cfg.output.dir = dir.path().join("out");
    let root = cfg.data.root();
    let report = match fetch_subject(
        42,
        &cfg.data.runs,
        &root,
        &cfg.data.base_url,
        &HttpTransport::default(),
    ) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(format!("fetch: {e}")),
    };
    if !report.failures.is_empty() {
        return Outcome::Fail(format!("fetch: {} failed downloads", report.failures.len()));
    }
    let manifest = match run_pipeline(&cfg) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(format!("pipeline: {e}")),
    };
    let rec = &manifest.subjects[0];
    let Some(all) = rec.scenarios.iter().find(|s| s.scenario == Scenario::All64) else {
        return Outcome::Fail(format!("no all64 result: {:?}", rec.failures));
    };
    let chance = chance_level(rec.n_test as u64, 0.05, 0.5).unwrap();
    verdict(
        rec.failures.is_empty() && all.overall_acc > chance,
        format!(
            "all64 {:.2}% vs chance {chance:.2}% (n_test {})",
            all.overall_acc, rec.n_test
        ),
    )
}

fn main() {
    let criteria: [(&str, Check, Duration); 10] = [
        (
            "published-table aggregates",
            table_aggregates,
            Duration::from_secs(1),
        ),
        ("Wilcoxon reproduction", wilcoxon, Duration::from_secs(5)),
        (
            "participant screen",
            participant_screen,
            Duration::from_secs(1),
        ),
        (
            "channel-set arithmetic",
            channel_sets,
            Duration::from_secs(1),
        ),
        ("gradient integrity", gradients, Duration::from_secs(120)),
        ("Grad-CAM oracle", gap_oracle, Duration::from_secs(10)),
        ("DSP properties", dsp_properties, Duration::from_secs(30)),
        (
            "synthetic faithfulness",
            faithfulness,
            Duration::from_secs(600),
        ),
        ("determinism", determinism, Duration::from_secs(600)),
        (
            "network smoke",
            network_smoke,
            Duration::from_secs(24 * 3600),
        ),
    ];
    let mut failures = 0;
    for (i, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let over = took > budget;
        let (tag, detail) = match outcome {
            Outcome::Pass(d) if over => ("FAIL", format!("{d}; over the {budget:?} budget")),
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!(
            "criterion {:>2} {tag} {name}: {detail} [{:.2}s]",
            i + 1,
            took.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
