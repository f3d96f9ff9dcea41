use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers;
use super::model::{argmax, Mode, Model, ModelConfig, N_CLASSES};
use super::optim::{adam_step, one_cycle_lr, AdamConfig, AdamState, OneCycleConfig};
use super::tensor::Tensor;
use crate::dataset::{Split, WindowDataset};
use crate::error::{arg_err, Error, Result};

/// Windows are scored in chunks of this size outside of training.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub dropout_p: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub one_cycle: OneCycleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch_size: 32,
            lr_max: 0.01,
            dropout_p: 0.2,
            seed: 0,
            adam: AdamConfig::default(),
            one_cycle: OneCycleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::Config(format!("lr_max {} must be positive", self.lr_max)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_accuracy: Option<f64>,
    pub lr_last: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub metrics: Vec<EpochMetrics>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

/// Standardized windows of a dataset, flattened for batching.
struct Prepared {
    n: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl Prepared {
    fn new(ds: &WindowDataset) -> Result<Self> {
        let n = ds.n;
        let mut data = vec![0.0; ds.windows.len() * n];
        for (w, out) in ds.windows.iter().zip(data.chunks_mut(n)) {
            crate::trace::standardize_f32_into(&w.samples, out)?;
        }
        let labels = ds.windows.iter().map(|w| w.label.code() as usize).collect();
        Ok(Self { n, data, labels })
    }

    fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let mut data = Vec::with_capacity(idx.len() * self.n);
        for &i in idx {
            data.extend_from_slice(&self.data[i * self.n..(i + 1) * self.n]);
        }
        let t = Tensor::new(vec![idx.len(), 1, self.n], data).expect("non-empty batch");
        (t, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Mean eval-mode loss and accuracy over `idx`; `None` for an empty set.
fn evaluate(model: &Model, prep: &Prepared, idx: &[usize]) -> Result<Option<(f64, f64)>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = prep.batch(chunk);
        let logits = model.logits(&x, Mode::Eval)?;
        let (loss, _) = layers::cross_entropy(logits.data(), N_CLASSES, &y);
        loss_sum += loss * chunk.len() as f64;
        correct += (0..chunk.len()).filter(|&i| argmax(logits.row(i)) == y[i]).count();
    }
    Ok(Some((loss_sum / idx.len() as f64, correct as f64 / idx.len() as f64)))
}

/// Mini-batch training with Adam and a one-cycle schedule. The returned model
/// is the epoch checkpoint with the lowest validation loss (earliest on ties);
/// without a validation split the training loss is used instead.
pub fn train(ds: &WindowDataset, mcfg: &ModelConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(ds, mcfg, tcfg, |_| {})
}

pub fn train_with_progress(
    ds: &WindowDataset,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut progress: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    tcfg.validate()?;
    if ds.n != mcfg.input_len {
        return Err(Error::Shape {
            layer: "input".into(),
            expected: vec![mcfg.input_len],
            actual: vec![ds.n],
        });
    }
    if ds.splits.train.is_empty() {
        return arg_err("training split is empty");
    }
    let mut mcfg = mcfg.clone();
    mcfg.dropout_p = tcfg.dropout_p;
    let prep = Prepared::new(ds)?;

    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut model = Model::new(mcfg, rng.random())?;
    let mut adam = AdamState::new(&model.params);
    let mut order = ds.splits.get(Split::Train).to_vec();
    let steps_per_epoch = order.len().div_ceil(tcfg.batch_size);
    let total_steps = steps_per_epoch * tcfg.epochs;
    let valid = ds.splits.get(Split::Valid);

    let mut metrics = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut step = 0;
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for idx in order.chunks(tcfg.batch_size) {
            let (x, y) = prep.batch(idx);
            let lg = model.loss_and_grad(&x, &y, rng.random())?;
            if !lg.loss.is_finite() {
                return Err(Error::Argument(format!("training diverged at epoch {epoch} (loss {})", lg.loss)));
            }
            lr = one_cycle_lr(step, total_steps, tcfg.lr_max, &tcfg.one_cycle)?;
            adam_step(&mut model.params, &lg.grads, &mut adam, lr, &tcfg.adam)?;
            model.update_running_stats(&lg.bn_stats);
            loss_sum += lg.loss * idx.len() as f64;
            step += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        let scored = evaluate(&model, &prep, valid)?;
        let m = EpochMetrics {
            epoch,
            train_loss,
            valid_loss: scored.map(|s| s.0),
            valid_accuracy: scored.map(|s| s.1),
            lr_last: lr,
        };
        progress(&m);
        let criterion = m.valid_loss.unwrap_or(train_loss);
        if best.as_ref().is_none_or(|(b, _, _)| criterion < *b) {
            best = Some((criterion, epoch, model.clone()));
        }
        metrics.push(m);
    }
    let (_, best_epoch, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        metrics,
        best_epoch,
    })
}

/// Accuracy of `model` on one split, `None` if that split is empty.
pub fn split_accuracy(model: &Model, ds: &WindowDataset, split: Split) -> Result<Option<f64>> {
    let prep = Prepared::new(ds)?;
    Ok(evaluate(model, &prep, ds.splits.get(split))?.map(|s| s.1))
}
