//! Grad-CAM, guided backpropagation and the channel/temporal relevance
//! summaries derived from them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{EpochProvenance, EpochSet};
use crate::edf::ClassLabel;
use crate::model::{Conformer, Mode, ModelError, TEMPORAL_CONV_HOOK};
use crate::tensor::{BackwardMode, Tape, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("no epochs to explain")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("export failed: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ExplainError>;

/// A differentiable two-class scorer that exposes an activation hook.
pub trait ClassScorer: Sync {
    /// `(n_channels, n_times)` of one input epoch.
    fn input_dims(&self) -> (usize, usize);
    /// Builds the `(1, 2)` logits for `input: (1, 1, C, T)` on `tape`.
    /// Must be deterministic (no dropout).
    fn scores(&self, tape: &mut Tape, input: Var) -> Result<Var>;
}

impl ClassScorer for Conformer {
    fn input_dims(&self) -> (usize, usize) {
        (self.config.n_channels, self.config.n_times)
    }

    fn scores(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let p = self.bind(tape, false);
        Ok(self.forward(tape, &p, input, Mode::Eval)?.logits)
    }
}

/// Which map feeds channel and temporal relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceSource {
    /// Upsampled Grad-CAM map.
    #[default]
    GradCam,
    /// `|upsampled Grad-CAM ⊙ guided backprop|`.
    GuidedGradCam,
}

/// Raw Grad-CAM output at the hooked layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCam {
    /// Per-feature-map weights `w_k`.
    pub weights: Vec<f64>,
    /// `ReLU(Σ_k w_k A^k)`, `(h × w)` row-major.
    pub coarse: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// Elements per feature map, `h · w`.
    pub z: usize,
}

/// Grad-CAM from a captured activation and its gradient, both
/// `(k, h, w)` row-major.
pub fn grad_cam_from(
    activation: &[f64],
    gradient: &[f64],
    k: usize,
    h: usize,
    w: usize,
) -> Result<GradCam> {
    let z = h * w;
    if activation.len() != k * z || gradient.len() != k * z || z == 0 {
        return Err(ExplainError::Shape(format!(
            "activation {} / gradient {} values for ({k}, {h}, {w})",
            activation.len(),
            gradient.len()
        )));
    }
    let weights: Vec<f64> = gradient
        .chunks_exact(z)
        .map(|g| g.iter().sum::<f64>() / z as f64)
        .collect();
    let mut coarse = vec![0.0; z];
    for (a, &wk) in activation.chunks_exact(z).zip(&weights) {
        for (c, &v) in coarse.iter_mut().zip(a) {
            *c += wk * v;
        }
    }
    for c in &mut coarse {
        *c = c.max(0.0);
    }
    Ok(GradCam {
        weights,
        coarse,
        height: h,
        width: w,
        z,
    })
}

fn input_var(
    scorer: &dyn ClassScorer,
    tape: &mut Tape,
    epoch: &[f64],
    requires_grad: bool,
) -> Result<Var> {
    let (c, t) = scorer.input_dims();
    if epoch.len() != c * t {
        return Err(ExplainError::Shape(format!(
            "epoch has {} values, model expects {c}×{t}",
            epoch.len()
        )));
    }
    let x = Tensor::new(vec![1, 1, c, t], epoch.to_vec())?;
    Ok(tape.leaf(x, requires_grad))
}

fn class_score(tape: &mut Tape, logits: Var, class: ClassLabel) -> Result<Var> {
    let mut onehot = vec![0.0; 2];
    onehot[class.index()] = 1.0;
    let sel = tape.constant(Tensor::new(vec![1, 2], onehot)?);
    let y = tape.mul(logits, sel)?;
    Ok(tape.sum(y))
}

/// Grad-CAM of class `class` at the activation hooked as `layer`, whose
/// shape must be `(1, k, h, w)`.
pub fn grad_cam(
    scorer: &dyn ClassScorer,
    epoch: &[f64],
    class: ClassLabel,
    layer: &str,
) -> Result<GradCam> {
    let mut tape = Tape::new();
    let x = input_var(scorer, &mut tape, epoch, false)?;
    let logits = scorer.scores(&mut tape, x)?;
    let a = tape.hooked(layer)?;
    let y = class_score(&mut tape, logits, class)?;
    tape.backward(y)?;
    let shape = tape.shape(a).to_vec();
    let [1, k, h, w] = shape[..] else {
        return Err(ExplainError::Shape(format!(
            "hooked activation {shape:?}, expected (1, k, h, w)"
        )));
    };
    let grad = tape
        .grad(a)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; k * h * w]);
    grad_cam_from(tape.value(a), &grad, k, h, w)
}

/// Corner-aligned separable bilinear interpolation of `(h × w)` to
/// `(target_h × target_w)`.
pub fn upsample_bilinear(
    coarse: &[f64],
    (h, w): (usize, usize),
    (th, tw): (usize, usize),
) -> Result<Vec<f64>> {
    if coarse.len() != h * w || h == 0 || w == 0 {
        return Err(ExplainError::Shape(format!(
            "{} values for {h}×{w}",
            coarse.len()
        )));
    }
    if th < h || tw < w {
        return Err(ExplainError::InvalidArgument(format!(
            "target {th}×{tw} smaller than source {h}×{w}"
        )));
    }
    let axis = |n_src: usize, n_dst: usize| -> Vec<(usize, usize, f64)> {
        (0..n_dst)
            .map(|i| {
                if n_src == 1 || n_dst == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (n_src - 1) as f64 / (n_dst - 1) as f64;
                let lo = (pos.floor() as usize).min(n_src - 1);
                let hi = (lo + 1).min(n_src - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(h, th);
    let cols = axis(w, tw);
    let mut out = Vec::with_capacity(th * tw);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = coarse[r0 * w + c0] * (1.0 - fc) + coarse[r0 * w + c1] * fc;
            let bottom = coarse[r1 * w + c0] * (1.0 - fc) + coarse[r1 * w + c1] * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Ok(out)
}

/// Input gradient of the class score with the guided ELU rule.
pub fn guided_backprop(
    scorer: &dyn ClassScorer,
    epoch: &[f64],
    class: ClassLabel,
) -> Result<Vec<f64>> {
    input_gradient(scorer, epoch, class, BackwardMode::Guided)
}

/// Plain input gradient of the class score (the ungated reference).
pub fn input_gradient(
    scorer: &dyn ClassScorer,
    epoch: &[f64],
    class: ClassLabel,
    mode: BackwardMode,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let x = input_var(scorer, &mut tape, epoch, true)?;
    let logits = scorer.scores(&mut tape, x)?;
    let y = class_score(&mut tape, logits, class)?;
    tape.backward_with(y, mode)?;
    Ok(tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; epoch.len()]))
}

/// Elementwise product of an upsampled Grad-CAM map and a guided map.
pub fn guided_gradcam(fine: &[f64], guided: &[f64]) -> Result<Vec<f64>> {
    if fine.len() != guided.len() {
        return Err(ExplainError::Shape(format!(
            "{} vs {} values",
            fine.len(),
            guided.len()
        )));
    }
    Ok(fine.iter().zip(guided).map(|(a, b)| a * b).collect())
}

/// Everything computed for one epoch and one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    pub class_label: ClassLabel,
    pub n_channels: usize,
    pub n_times: usize,
    /// Grad-CAM at the hooked layer, `(n_channels × t1)`.
    pub coarse: Vec<f64>,
    pub coarse_width: usize,
    /// Coarse map upsampled to the epoch, `(n_channels × n_times)`, ≥ 0.
    pub fine: Vec<f64>,
    pub weights: Vec<f64>,
    pub z: usize,
    /// Guided Grad-CAM product, present when it was computed.
    pub guided_gradcam: Option<Vec<f64>>,
    pub provenance: Option<EpochProvenance>,
}

impl RelevanceMap {
    /// Nonnegative `(n_channels × n_times)` relevance for `source`.
    pub fn relevance(&self, source: RelevanceSource) -> Vec<f64> {
        match (source, &self.guided_gradcam) {
            (RelevanceSource::GuidedGradCam, Some(g)) => g.iter().map(|v| v.abs()).collect(),
            _ => self.fine.clone(),
        }
    }
}

/// Grad-CAM (at the temporal-convolution hook), its upsampling and, for
/// [`RelevanceSource::GuidedGradCam`], the guided product.
pub fn explain_epoch(
    model: &Conformer,
    epoch: &[f64],
    class: ClassLabel,
    source: RelevanceSource,
    provenance: Option<EpochProvenance>,
) -> Result<RelevanceMap> {
    let (c, t) = model.input_dims();
    let cam = grad_cam(model, epoch, class, TEMPORAL_CONV_HOOK)?;
    if cam.height != c {
        return Err(ExplainError::Shape(format!(
            "hooked layer has {} rows, epoch {c}",
            cam.height
        )));
    }
    let fine = upsample_bilinear(&cam.coarse, (cam.height, cam.width), (c, t))?;
    let guided = match source {
        RelevanceSource::GuidedGradCam => Some(guided_gradcam(
            &fine,
            &guided_backprop(model, epoch, class)?,
        )?),
        RelevanceSource::GradCam => None,
    };
    Ok(RelevanceMap {
        class_label: class,
        n_channels: c,
        n_times: t,
        coarse: cam.coarse,
        coarse_width: cam.width,
        fine,
        weights: cam.weights,
        z: cam.z,
        guided_gradcam: guided,
        provenance,
    })
}

/// Channels ordered by descending relevance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRanking {
    pub class_label: ClassLabel,
    /// `(label, score)` in montage order.
    pub scores: Vec<(String, f64)>,
    /// Labels by descending score; ties keep montage order.
    pub order: Vec<String>,
}

impl ChannelRanking {
    pub fn from_scores(class_label: ClassLabel, scores: Vec<(String, f64)>) -> Self {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then(a.cmp(&b)));
        let order = idx.iter().map(|&i| scores[i].0.clone()).collect();
        Self {
            class_label,
            scores,
            order,
        }
    }

    pub fn score(&self, label: &str) -> Option<f64> {
        self.scores
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, s)| *s)
    }

    pub fn top(&self, k: usize) -> &[String] {
        &self.order[..k.min(self.order.len())]
    }

    /// 1-based rank of `label`.
    pub fn rank(&self, label: &str) -> Option<usize> {
        self.order.iter().position(|l| l == label).map(|i| i + 1)
    }

    /// `channel,score,rank,class` rows in rank order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w =
            csv::Writer::from_path(path).map_err(|e| ExplainError::Format(e.to_string()))?;
        w.write_record(["channel", "score", "rank", "class"])
            .map_err(|e| ExplainError::Format(e.to_string()))?;
        for (i, l) in self.order.iter().enumerate() {
            let s = self.score(l).unwrap_or(0.0);
            w.write_record([
                l.clone(),
                s.to_string(),
                (i + 1).to_string(),
                self.class_label.name().to_string(),
            ])
            .map_err(|e| ExplainError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean over maps of each channel's time-averaged relevance.
pub fn channel_relevance(
    maps: &[RelevanceMap],
    channel_labels: &[String],
    source: RelevanceSource,
) -> Result<ChannelRanking> {
    let first = maps.first().ok_or(ExplainError::Empty)?;
    let (c, t) = (first.n_channels, first.n_times);
    if channel_labels.len() != c {
        return Err(ExplainError::Shape(format!(
            "{} labels for {c} channels",
            channel_labels.len()
        )));
    }
    let mut score = vec![0.0; c];
    for m in maps {
        if (m.n_channels, m.n_times) != (c, t) || m.class_label != first.class_label {
            return Err(ExplainError::InvalidArgument(
                "maps differ in shape or class".into(),
            ));
        }
        for (s, row) in score.iter_mut().zip(m.relevance(source).chunks_exact(t)) {
            *s += row.iter().sum::<f64>() / t as f64;
        }
    }
    let scores = channel_labels
        .iter()
        .cloned()
        .zip(score.into_iter().map(|s| s / maps.len() as f64))
        .collect();
    Ok(ChannelRanking::from_scores(first.class_label, scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    pub source: RelevanceSource,
    /// Restrict to epochs the model classifies correctly.
    pub correct_only: bool,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            source: RelevanceSource::default(),
            correct_only: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub class_label: ClassLabel,
    pub maps: Vec<RelevanceMap>,
    pub ranking: ChannelRanking,
}

/// Explains every (selected) epoch of `class` in `epochs` and ranks
/// channels. Falls back to all epochs of the class when none is correct.
pub fn explain_class(
    model: &Conformer,
    epochs: &EpochSet,
    class: ClassLabel,
    opts: ExplainOptions,
) -> Result<ClassExplanation> {
    model.check_epochs(epochs)?;
    let of_class: Vec<usize> = (0..epochs.len())
        .filter(|&i| epochs.labels[i] == class)
        .collect();
    if of_class.is_empty() {
        return Err(ExplainError::Empty);
    }
    let mut chosen = of_class.clone();
    if opts.correct_only {
        let pred = model.predict(epochs)?;
        chosen.retain(|&i| pred.labels[i] == class);
        if chosen.is_empty() {
            log::warn!(
                "no correctly classified {class} epochs; using all {}",
                of_class.len()
            );
            chosen = of_class;
        }
    }
    let maps = chosen
        .par_iter()
        .map(|&i| {
            explain_epoch(
                model,
                epochs.epoch(i),
                class,
                opts.source,
                Some(epochs.provenance[i]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let ranking = channel_relevance(&maps, &epochs.channel_labels, opts.source)?;
    Ok(ClassExplanation {
        class_label: class,
        maps,
        ranking,
    })
}

/// Element-wise mean of the maps' relevance, `(n_channels × n_times)`.
pub fn mean_relevance(maps: &[RelevanceMap], source: RelevanceSource) -> Result<Vec<f64>> {
    let first = maps.first().ok_or(ExplainError::Empty)?;
    let mut acc = vec![0.0; first.n_channels * first.n_times];
    for m in maps {
        for (a, v) in acc.iter_mut().zip(m.relevance(source)) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= maps.len() as f64;
    }
    Ok(acc)
}

/// Linear-interpolated quantile of `values` at `q ∈ [0, 1]`.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Maximal runs of samples whose channel-mean relevance exceeds the
/// `(1 − top_fraction)` quantile, as `[start, end)` seconds. When no sample
/// exceeds it strictly (a flat profile), samples equal to it count.
pub fn temporal_relevance(
    fine: &[f64],
    n_channels: usize,
    n_times: usize,
    fs: f64,
    top_fraction: f64,
) -> Result<Vec<(f64, f64)>> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(ExplainError::InvalidArgument(format!(
            "top fraction {top_fraction}"
        )));
    }
    if fine.len() != n_channels * n_times || n_times == 0 || n_channels == 0 {
        return Err(ExplainError::Shape(format!(
            "{} values for {n_channels}×{n_times}",
            fine.len()
        )));
    }
    let profile: Vec<f64> = (0..n_times)
        .map(|t| (0..n_channels).map(|c| fine[c * n_times + t]).sum::<f64>() / n_channels as f64)
        .collect();
    let q = quantile(&profile, 1.0 - top_fraction);
    let mut keep: Vec<bool> = profile.iter().map(|&v| v > q).collect();
    if !keep.iter().any(|&k| k) {
        keep = profile.iter().map(|&v| v >= q).collect();
    }
    let mut windows = Vec::new();
    let mut start = None;
    for (i, &k) in keep.iter().chain(std::iter::once(&false)).enumerate() {
        match (k, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                windows.push((s as f64 / fs, i as f64 / fs));
                start = None;
            }
            _ => {}
        }
    }
    Ok(windows)
}

/// Writes the maps as a JSON array.
pub fn write_maps_json(maps: &[RelevanceMap], path: &Path) -> Result<()> {
    let json = serde_json::to_string(maps).map_err(|e| ExplainError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
