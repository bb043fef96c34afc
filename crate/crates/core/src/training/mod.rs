//! Per-subject training, trial-grouped splitting and Table-I-shaped metrics.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::EpochSet;
use crate::edf::ClassLabel;
use crate::model::{Conformer, Mode, ModelError};
use crate::tensor::{RngState, Tape, Tensor, TensorError};

mod metrics;

pub use metrics::{
    metrics_from_counts, read_metrics_csv, write_metrics_csv, write_metrics_json, MetricsRow,
    SubjectMetrics,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {0} has {1} trial(s); cannot stratify")]
    ClassTooSmall(ClassLabel, usize),
    /// Training hit a non-finite loss or gradient. `last_good` holds the
    /// parameters from before the failing step.
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite {
        epoch: usize,
        step: usize,
        last_good: Box<Conformer>,
        history: TrainHistory,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("malformed metrics file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: RngState,
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 32,
            epochs: 150,
            seed: RngState::new(0),
            weight_decay: 0.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, n_train: usize) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidArgument(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam moments ({}, {})", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps must be positive and weight_decay non-negative".into());
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            return bad(format!(
                "batch size {} for {n_train} training epochs",
                self.batch_size
            ));
        }
        Ok(())
    }
}

/// One training epoch's summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss.
    pub loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch, %.
    pub train_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Eval-mode training accuracy before the first update, %.
    pub initial_train_acc: f64,
    /// Eval-mode training accuracy after the last update, %.
    pub final_train_acc: f64,
    pub epochs: Vec<EpochRecord>,
}

/// Stratified split that keeps all windows of a trial on one side.
///
/// Trials are grouped by provenance, shuffled per class with `seed`, and
/// `round(test_fraction · trials)` of each class go to the test side (at
/// least one, and at least one left for training). Both outputs keep the
/// input order.
pub fn split_dataset(
    epochs: &EpochSet,
    test_fraction: f64,
    seed: RngState,
) -> Result<(EpochSet, EpochSet)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TrainError::InvalidArgument(format!(
            "test fraction {test_fraction}"
        )));
    }
    let mut groups: [BTreeMap<_, Vec<usize>>; 2] = [BTreeMap::new(), BTreeMap::new()];
    for (i, (p, l)) in epochs.provenance.iter().zip(&epochs.labels).enumerate() {
        groups[l.index()].entry(p.trial_key()).or_default().push(i);
    }
    let mut is_test = vec![false; epochs.len()];
    for (class, g) in ClassLabel::ALL.iter().zip(&groups) {
        if g.len() < 2 {
            return Err(TrainError::ClassTooSmall(*class, g.len()));
        }
        let mut keys: Vec<_> = g.keys().copied().collect();
        keys.shuffle(&mut seed.derive(class.index() as u64).rng());
        let n_test =
            ((test_fraction * keys.len() as f64).round() as usize).clamp(1, keys.len() - 1);
        for key in &keys[..n_test] {
            for &i in &g[key] {
                is_test[i] = true;
            }
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..epochs.len()).partition(|&i| is_test[i]);
    Ok((epochs.select(&train), epochs.select(&test)))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &Conformer) -> Self {
        let zeros: Vec<Vec<f64>> = model
            .params
            .iter()
            .map(|(_, t)| vec![0.0; t.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Conformer, grads: &[Vec<f64>], hp: &Hyperparams) {
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t);
        let bc2 = 1.0 - hp.beta2.powi(self.t);
        for (i, (_, p)) in model.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j] + hp.weight_decay * *w;
                m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g;
                v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g * g;
                *w -= hp.learning_rate * (m[j] / bc1) / ((v[j] / bc2).sqrt() + hp.adam_eps);
            }
        }
    }
}

fn batch_input(model: &Conformer, set: &EpochSet, idx: &[usize]) -> Result<Tensor> {
    let l = set.epoch_len();
    let mut data = Vec::with_capacity(idx.len() * l);
    for &i in idx {
        data.extend_from_slice(set.epoch(i));
    }
    Ok(Tensor::new(model.input_shape(idx.len()), data)?)
}

/// Percentage of epochs classified correctly by the eval-mode model.
pub fn accuracy(model: &Conformer, set: &EpochSet) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(set)?;
    let correct = pred
        .labels
        .iter()
        .zip(&set.labels)
        .filter(|(a, b)| a == b)
        .count();
    Ok(100.0 * correct as f64 / set.len() as f64)
}

/// Adam on mean cross-entropy over shuffled mini-batches for a fixed number
/// of epochs. Shuffling and dropout draw from streams derived from
/// `hp.seed`, so identical inputs give bit-identical results.
pub fn train(
    mut model: Conformer,
    train_set: &EpochSet,
    hp: &Hyperparams,
) -> Result<(Conformer, TrainHistory)> {
    model.check_epochs(train_set)?;
    hp.validate(train_set.len())?;
    let targets: Vec<usize> = train_set.labels.iter().map(|l| l.index()).collect();
    let shuffle_seed = hp.seed.derive(1);
    let dropout_seed = hp.seed.derive(2);
    let mut adam = Adam::new(&model);
    let mut history = TrainHistory {
        initial_train_acc: accuracy(&model, train_set)?,
        ..TrainHistory::default()
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;

    for epoch in 0..hp.epochs {
        order.sort_unstable();
        order.shuffle(
            &mut RngState {
                seed: shuffle_seed.seed,
                counter: epoch as u64,
            }
            .rng(),
        );
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        let batches: Vec<&[usize]> = order.chunks(hp.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let abort = |model: &Conformer, history: &TrainHistory| TrainError::NonFinite {
                epoch,
                step: b,
                last_good: Box::new(model.clone()),
                history: history.clone(),
            };
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let x = tape.constant(batch_input(&model, train_set, idx)?);
            let mode = Mode::Train {
                rng: dropout_seed.derive(step),
            };
            step += 1;
            let out = match model.forward(&mut tape, &p, x, mode) {
                Ok(o) => o,
                Err(ModelError::NonFinite(_)) => return Err(abort(&model, &history)),
                Err(e) => return Err(e.into()),
            };
            let batch_targets: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let loss = tape.cross_entropy(out.logits, &batch_targets)?;
            let lv = tape.value(loss)[0];
            if !lv.is_finite() {
                return Err(abort(&model, &history));
            }
            for (row, &t) in tape.value(out.logits).chunks_exact(2).zip(&batch_targets) {
                correct += usize::from(crate::model::argmax_class([row[0], row[1]]).index() == t);
            }
            tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = model
                .params
                .names()
                .map(|n| {
                    let v = p.0[n];
                    tape.grad(v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; tape.value(v).len()])
                })
                .collect();
            if grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(abort(&model, &history));
            }
            adam.step(&mut model, &grads, hp);
            if let Some(stats) = &out.batch_stats {
                model.update_running_stats(stats);
            }
            loss_sum += lv * idx.len() as f64;
        }
        let rec = EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            train_acc: 100.0 * correct as f64 / train_set.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4}, train acc {:.1}%",
            rec.loss,
            rec.train_acc
        );
        history.epochs.push(rec);
    }
    history.final_train_acc = accuracy(&model, train_set)?;
    Ok((model, history))
}

/// Per-window test metrics.
pub fn evaluate(
    model: &Conformer,
    test: &EpochSet,
    subject_id: u32,
    chance_level: f64,
) -> Result<SubjectMetrics> {
    if test.is_empty() {
        return Err(TrainError::InvalidArgument("empty test set".into()));
    }
    let pred = model.predict(test)?;
    let mut correct = [0usize; 2];
    for (p, t) in pred.labels.iter().zip(&test.labels) {
        if p == t {
            correct[t.index()] += 1;
        }
    }
    let counts = test.class_counts();
    Ok(metrics_from_counts(
        subject_id,
        [correct[0], correct[1]],
        counts,
        chance_level,
    ))
}

/// Loads/stores training histories next to checkpoints.
pub fn save_history(history: &TrainHistory, path: &Path) -> Result<()> {
    let json =
        serde_json::to_string_pretty(history).map_err(|e| TrainError::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
