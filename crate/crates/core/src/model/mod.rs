//! The convolution + self-attention classifier.
//!
//! Stages: a temporal convolution `(k,1,1,K_t)` applied to the single-plane
//! input `(N,1,C,T)`; a depthwise spatial convolution `(k,1,C,1)` that
//! collapses the electrode axis; batch norm, ELU, average pooling and dropout;
//! the pooled maps become `T'` tokens of width `k` for a pre-norm transformer
//! encoder; a two-layer head maps the flattened tokens to two logits in
//! class order `[Left, Right]`.
//!
//! The temporal-convolution output `(N,k,C,T1)` is registered as the hook
//! [`TEMPORAL_CONV_HOOK`]; it is the last activation where electrode identity
//! is intact and is the Grad-CAM target layer.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::EpochSet;
use crate::edf::ClassLabel;
use crate::tensor::{
    multihead_attention, AttentionParams, BatchNormMode, BatchStats, ParamStore, RngState, Tape,
    Tensor, TensorError, Var,
};

pub const TEMPORAL_CONV_HOOK: &str = "temporal_conv";
const BN_EPS: f64 = 1e-5;
const LN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const PREDICT_CHUNK: usize = 32;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("input shape {found:?} does not match the model (expected {expected:?})")]
    Shape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite values after layer `{0}`")]
    NonFinite(&'static str),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConformerConfig {
    pub n_channels: usize,
    pub n_times: usize,
    pub n_feature_maps: usize,
    pub temporal_kernel: usize,
    pub pool_len: usize,
    pub pool_stride: usize,
    pub encoder_depth: usize,
    pub heads: usize,
    /// Hidden width of the encoder MLP, as a multiple of `n_feature_maps`.
    pub mlp_ratio: usize,
    /// Width of the first fully connected layer of the head.
    pub fc_hidden: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
}

impl Default for ConformerConfig {
    fn default() -> Self {
        Self {
            n_channels: 64,
            n_times: 160,
            n_feature_maps: 40,
            temporal_kernel: 25,
            pool_len: 75,
            pool_stride: 15,
            encoder_depth: 2,
            heads: 4,
            mlp_ratio: 4,
            fc_hidden: 32,
            dropout_p: 0.5,
            n_classes: 2,
        }
    }
}

impl ConformerConfig {
    /// Width of the temporal-convolution output.
    pub fn t1(&self) -> usize {
        self.n_times + 1 - self.temporal_kernel
    }

    /// Number of encoder tokens after pooling.
    pub fn tokens(&self) -> usize {
        (self.t1() - self.pool_len) / self.pool_stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.n_channels == 0 || self.n_feature_maps == 0 || self.temporal_kernel == 0 {
            return bad("channel, feature-map and kernel sizes must be positive".into());
        }
        if self.n_times < self.temporal_kernel {
            return bad(format!(
                "n_times {} shorter than temporal kernel {}",
                self.n_times, self.temporal_kernel
            ));
        }
        if self.pool_len == 0 || self.pool_stride == 0 || self.t1() < self.pool_len {
            return bad(format!(
                "pooling window {} (stride {}) does not fit {} time steps",
                self.pool_len,
                self.pool_stride,
                self.t1()
            ));
        }
        if self.heads == 0 || !self.n_feature_maps.is_multiple_of(self.heads) {
            return bad(format!(
                "embedding dimension {} not divisible by {} heads",
                self.n_feature_maps, self.heads
            ));
        }
        if self.mlp_ratio == 0 || self.fc_hidden == 0 {
            return bad("MLP ratio and head width must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout probability {}", self.dropout_p));
        }
        if self.n_classes != 2 {
            return bad(format!("{} classes; the task is binary", self.n_classes));
        }
        Ok(())
    }

    /// Parameter names, shapes and initializers in initialization order.
    fn layout(&self) -> Vec<(String, Vec<usize>, Init)> {
        let k = self.n_feature_maps;
        let h = k * self.mlp_ratio;
        let flat = self.tokens() * k;
        let mut v = vec![
            (
                "temporal.weight".into(),
                vec![k, 1, 1, self.temporal_kernel],
                Init::FanIn(self.temporal_kernel),
            ),
            (
                "spatial.weight".into(),
                vec![k, 1, self.n_channels, 1],
                Init::FanIn(self.n_channels),
            ),
            ("bn.gamma".into(), vec![k], Init::One),
            ("bn.beta".into(), vec![k], Init::Zero),
        ];
        for b in 0..self.encoder_depth {
            let p = |s: &str| format!("enc{b}.{s}");
            v.push((p("ln1.gamma"), vec![k], Init::One));
            v.push((p("ln1.beta"), vec![k], Init::Zero));
            for m in ["q", "k", "v", "o"] {
                v.push((p(&format!("attn.w{m}")), vec![k, k], Init::FanIn(k)));
                v.push((p(&format!("attn.b{m}")), vec![k], Init::FanIn(k)));
            }
            v.push((p("ln2.gamma"), vec![k], Init::One));
            v.push((p("ln2.beta"), vec![k], Init::Zero));
            v.push((p("mlp.w1"), vec![k, h], Init::FanIn(k)));
            v.push((p("mlp.b1"), vec![h], Init::FanIn(k)));
            v.push((p("mlp.w2"), vec![h, k], Init::FanIn(h)));
            v.push((p("mlp.b2"), vec![k], Init::FanIn(h)));
        }
        v.push((
            "head.w1".into(),
            vec![flat, self.fc_hidden],
            Init::FanIn(flat),
        ));
        v.push(("head.b1".into(), vec![self.fc_hidden], Init::FanIn(flat)));
        v.push((
            "head.w2".into(),
            vec![self.fc_hidden, self.n_classes],
            Init::FanIn(self.fc_hidden),
        ));
        v.push((
            "head.b2".into(),
            vec![self.n_classes],
            Init::FanIn(self.fc_hidden),
        ));
        v
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    FanIn(usize),
    One,
    Zero,
}

/// Trainable parameters plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Conformer {
    pub config: ConformerConfig,
    pub params: ParamStore,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

/// Forward-pass behaviour. Training draws dropout masks from `rng` and
/// normalizes with batch statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Train { rng: RngState },
    Eval,
}

/// Parameters placed on a tape, by name.
#[derive(Debug, Clone, Default)]
pub struct Bindings(pub BTreeMap<String, Var>);

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(N, 2)` pre-softmax class scores.
    pub logits: Var,
    /// Temporal-convolution activation `(N, k, C, T1)`, also hooked.
    pub activation: Var,
    /// Batch statistics, in training mode.
    pub batch_stats: Option<BatchStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<ClassLabel>,
    /// Per-epoch logits `[Y_left, Y_right]`.
    pub scores: Vec<[f64; 2]>,
}

/// Index of the larger score; ties go to the lower class index.
pub fn argmax_class(scores: [f64; 2]) -> ClassLabel {
    if scores[1] > scores[0] {
        ClassLabel::Right
    } else {
        ClassLabel::Left
    }
}

fn check_finite(tape: &Tape, v: Var, layer: &'static str) -> Result<()> {
    if tape.value(v).iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(layer))
    }
}

impl Conformer {
    /// Initializes parameters uniformly in `±1/sqrt(fan_in)`. Each tensor
    /// draws from its own stream derived from `seed`, so the result does not
    /// depend on anything but `(config, seed)`.
    pub fn build(config: ConformerConfig, seed: RngState) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (i, (name, shape, init)) in config.layout().into_iter().enumerate() {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::One => vec![1.0; n],
                Init::Zero => vec![0.0; n],
                Init::FanIn(fan) => {
                    let bound = 1.0 / (fan as f64).sqrt();
                    let mut rng = seed.derive(i as u64).rng();
                    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
                }
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        let k = config.n_feature_maps;
        Ok(Self {
            config,
            params,
            running_mean: vec![0.0; k],
            running_var: vec![1.0; k],
        })
    }

    /// Places every parameter on `tape`.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bindings {
        Bindings(
            self.params
                .iter()
                .map(|(name, t)| (name.to_string(), tape.leaf(t.clone(), requires_grad)))
                .collect(),
        )
    }

    pub fn input_shape(&self, n: usize) -> Vec<usize> {
        vec![n, 1, self.config.n_channels, self.config.n_times]
    }

    /// Runs the network on `input: (N, 1, C, T)`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        p: &Bindings,
        input: Var,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let shape = tape.shape(input).to_vec();
        let n = shape.first().copied().unwrap_or(0);
        if shape != self.input_shape(n) || n == 0 {
            return Err(ModelError::Shape {
                expected: self.input_shape(n.max(1)),
                found: shape,
            });
        }
        let k = cfg.n_feature_maps;
        let mut rng = match mode {
            Mode::Train { rng } => Some(rng),
            Mode::Eval => None,
        };
        let mut dropout = |tape: &mut Tape, x: Var| -> Result<Var> {
            let state = rng.as_mut().map(RngState::advance);
            Ok(tape.dropout(x, cfg.dropout_p, state)?)
        };

        let a = tape.conv2d(input, p.get("temporal.weight")?, (1, 1))?;
        tape.hook(TEMPORAL_CONV_HOOK, a);
        check_finite(tape, a, "temporal_conv")?;
        let s = tape.conv2d_grouped(a, p.get("spatial.weight")?, (1, 1), k)?;
        let bn_mode = match mode {
            Mode::Train { .. } => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval {
                mean: &self.running_mean,
                var: &self.running_var,
            },
        };
        let (b, batch_stats) =
            tape.batch_norm(s, p.get("bn.gamma")?, p.get("bn.beta")?, bn_mode, BN_EPS)?;
        let e = tape.elu(b);
        let pooled = tape.avg_pool2d(e, (1, cfg.pool_len), (1, cfg.pool_stride))?;
        let pooled = dropout(tape, pooled)?;
        check_finite(tape, pooled, "conv_stage")?;

        let t = cfg.tokens();
        let tokens = tape.reshape(pooled, &[n, k, t])?;
        let mut x = tape.permute(tokens, &[0, 2, 1])?;
        for blk in 0..cfg.encoder_depth {
            let name = |s: &str| format!("enc{blk}.{s}");
            let h = tape.layer_norm(
                x,
                p.get(&name("ln1.gamma"))?,
                p.get(&name("ln1.beta"))?,
                LN_EPS,
            )?;
            let attn = AttentionParams {
                wq: p.get(&name("attn.wq"))?,
                bq: p.get(&name("attn.bq"))?,
                wk: p.get(&name("attn.wk"))?,
                bk: p.get(&name("attn.bk"))?,
                wv: p.get(&name("attn.wv"))?,
                bv: p.get(&name("attn.bv"))?,
                wo: p.get(&name("attn.wo"))?,
                bo: p.get(&name("attn.bo"))?,
            };
            let att = multihead_attention(tape, h, cfg.heads, &attn)?.output;
            let att = dropout(tape, att)?;
            x = tape.add(x, att)?;

            let h = tape.layer_norm(
                x,
                p.get(&name("ln2.gamma"))?,
                p.get(&name("ln2.beta"))?,
                LN_EPS,
            )?;
            let h = tape.reshape(h, &[n * t, k])?;
            let h = tape.matmul(h, p.get(&name("mlp.w1"))?)?;
            let h = tape.add_bias(h, p.get(&name("mlp.b1"))?)?;
            let h = tape.gelu(h);
            let h = dropout(tape, h)?;
            let h = tape.matmul(h, p.get(&name("mlp.w2"))?)?;
            let h = tape.add_bias(h, p.get(&name("mlp.b2"))?)?;
            let h = dropout(tape, h)?;
            let h = tape.reshape(h, &[n, t, k])?;
            x = tape.add(x, h)?;
        }
        check_finite(tape, x, "encoder")?;

        let flat = tape.reshape(x, &[n, t * k])?;
        let h = tape.matmul(flat, p.get("head.w1")?)?;
        let h = tape.add_bias(h, p.get("head.b1")?)?;
        let h = tape.elu(h);
        let h = dropout(tape, h)?;
        let h = tape.matmul(h, p.get("head.w2")?)?;
        let logits = tape.add_bias(h, p.get("head.b2")?)?;
        check_finite(tape, logits, "classifier")?;
        Ok(ForwardOutput {
            logits,
            activation: a,
            batch_stats,
        })
    }

    /// Folds one training batch's statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for c in 0..self.running_mean.len() {
            self.running_mean[c] =
                (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * stats.mean[c];
            self.running_var[c] =
                (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * stats.var[c];
        }
    }

    /// Eval-mode logits for a contiguous block of epochs.
    pub fn logits(
        &self,
        epochs: &EpochSet,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<[f64; 2]>> {
        self.check_epochs(epochs)?;
        let n = range.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let l = epochs.epoch_len();
        let data = epochs.data[range.start * l..range.end * l].to_vec();
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(self.input_shape(n), data)?);
        let out = self.forward(&mut tape, &p, x, Mode::Eval)?;
        Ok(tape
            .value(out.logits)
            .chunks_exact(2)
            .map(|c| [c[0], c[1]])
            .collect())
    }

    /// Class decisions and logits for every epoch. Evaluation is per-sample,
    /// so chunking (and its parallelism) does not change the result.
    pub fn predict(&self, epochs: &EpochSet) -> Result<Prediction> {
        let chunks: Vec<_> = (0..epochs.len()).step_by(PREDICT_CHUNK).collect();
        let parts = chunks
            .par_iter()
            .map(|&s| self.logits(epochs, s..(s + PREDICT_CHUNK).min(epochs.len())))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<[f64; 2]> = parts.into_iter().flatten().collect();
        Ok(Prediction {
            labels: scores.iter().map(|&s| argmax_class(s)).collect(),
            scores,
        })
    }

    pub fn check_epochs(&self, epochs: &EpochSet) -> Result<()> {
        if epochs.n_channels != self.config.n_channels || epochs.n_times != self.config.n_times {
            return Err(ModelError::Shape {
                expected: vec![self.config.n_channels, self.config.n_times],
                found: vec![epochs.n_channels, epochs.n_times],
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.all_finite()
            && self
                .running_mean
                .iter()
                .chain(&self.running_var)
                .all(|v| v.is_finite())
    }

    /// Writes `<path>` (parameter store; running statistics stored under the
    /// `buffer.` prefix), its JSON manifest and `<stem>.config.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut store = self.params.clone();
        let k = self.running_mean.len();
        store.insert(
            "buffer.running_mean",
            Tensor::new(vec![k], self.running_mean.clone())?,
        );
        store.insert(
            "buffer.running_var",
            Tensor::new(vec![k], self.running_var.clone())?,
        );
        store.save(path)?;
        let cfg = serde_json::to_string_pretty(&self.config)
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(config_path(path), cfg)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(config_path(path))?;
        let config: ConformerConfig =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        config.validate()?;
        let store = ParamStore::load(path)?;
        let take = |name: &str| -> Result<Vec<f64>> {
            let t = store.require(name)?.clone();
            Ok(t.into_data())
        };
        let running_mean = take("buffer.running_mean")?;
        let running_var = take("buffer.running_var")?;
        let mut params = ParamStore::new();
        for (name, shape, _) in config.layout() {
            let t = store
                .get(&name)
                .ok_or_else(|| ModelError::MissingParam(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "`{name}` has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
            params.insert(name, t.clone());
        }
        Ok(Self {
            config,
            params,
            running_mean,
            running_var,
        })
    }
}

fn config_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    path.with_file_name(format!("{stem}.config.json"))
}
