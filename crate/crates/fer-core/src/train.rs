//! Training loop: SGD, reduce-on-plateau learning rate schedule, early
//! stopping on validation loss, best/last checkpointing.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batch_iterator, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Mode, ResEmoteNet};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub plateau_factor: f32,
    pub plateau_patience: usize,
    /// Absolute improvement below this counts as a plateau epoch.
    pub plateau_threshold: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub min_lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub checkpoint_dir: Option<PathBuf>,
    /// Zeroes recorded wall-clock times so reports are byte-reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 3,
            plateau_threshold: 1e-4,
            early_stop_patience: 5,
            max_epochs: 80,
            batch_size: 16,
            seed: 0,
            min_lr: 1e-7,
            momentum: 0.0,
            weight_decay: 0.0,
            checkpoint_dir: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config("plateau_factor must be in (0, 1)".into()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patiences must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// SGD bookkeeping: current learning rate plus optional momentum buffers.
pub struct Optimizer {
    pub lr: f32,
    momentum: f32,
    weight_decay: f32,
    velocities: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            momentum: config.momentum,
            weight_decay: config.weight_decay,
            velocities: Vec::new(),
        }
    }

    /// value <- value - lr * grad, then clear gradients.
    pub fn step(&mut self, model: &mut ResEmoteNet) {
        if self.momentum != 0.0 && self.velocities.is_empty() {
            model.visit_parameters(|p| self.velocities.push(p.grad.zeros_like()));
        }
        let mut idx = 0;
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let velocities = &mut self.velocities;
        model.visit_parameters(|p| {
            let grads = p.grad.data_mut();
            let values = p.value.data_mut();
            if mu == 0.0 {
                for (v, g) in values.iter_mut().zip(grads.iter_mut()) {
                    let eff = *g + wd * *v;
                    *v -= lr * eff;
                    *g = 0.0;
                }
            } else {
                let vel = velocities[idx].data_mut();
                for ((v, g), m) in values.iter_mut().zip(grads.iter_mut()).zip(vel.iter_mut()) {
                    let eff = *g + wd * *v;
                    *m = mu * *m + eff;
                    *v -= lr * *m;
                    *g = 0.0;
                }
            }
            idx += 1;
        });
    }
}

/// Reduce-on-plateau: multiply the learning rate by `factor` after `patience`
/// consecutive epochs without an improvement greater than `threshold`.
pub struct PlateauScheduler {
    pub lr: f32,
    factor: f32,
    patience: usize,
    threshold: f64,
    min_lr: f32,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            lr: config.learning_rate,
            factor: config.plateau_factor,
            patience: config.plateau_patience,
            threshold: config.plateau_threshold,
            min_lr: config.min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the previous learning rate when a reduction happened.
    pub fn step(&mut self, val_loss: f64) -> Option<f32> {
        if val_loss < self.best - self.threshold {
            self.best = val_loss;
            self.bad_epochs = 0;
            return None;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            let old = self.lr;
            let reduced = (self.lr * self.factor).max(self.min_lr);
            if reduced < self.lr {
                self.lr = reduced;
                return Some(old);
            }
        }
        None
    }
}

/// True once the best validation loss has gone `patience` consecutive epochs
/// without improving.
pub fn early_stop_check(history: &[f64], patience: usize) -> bool {
    let mut best = f64::INFINITY;
    let mut bad = 0usize;
    for &loss in history {
        if loss < best {
            best = loss;
            bad = 0;
        } else {
            bad += 1;
        }
    }
    bad >= patience
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f32,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LrEvent {
    pub epoch: usize,
    pub old_lr: f32,
    pub new_lr: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub lr_events: Vec<LrEvent>,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// The full training recipe: seeded shuffling, forward/backward/SGD per
/// batch, per-epoch validation, plateau scheduling, checkpoint-if-best and
/// early stopping.
pub fn fit(
    model: &mut ResEmoteNet,
    train_ds: &LabeledDataset,
    val_ds: &LabeledDataset,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    }

    let mut optimizer = Optimizer::new(config);
    let mut scheduler = PlateauScheduler::new(config);
    let mut report = TrainReport {
        epochs: Vec::new(),
        lr_events: Vec::new(),
        stop_reason: StopReason::MaxEpochs,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut val_history = Vec::new();

    for epoch in 0..config.max_epochs {
        let start = Instant::now();
        model.set_mode(Mode::Train);
        let mut loss_sum = 0f64;
        let mut seen = 0usize;
        let batches = batch_iterator(train_ds, config.batch_size, true, config.seed ^ epoch as u64)?;
        for (batch_idx, (images, labels)) in batches.enumerate() {
            model.zero_grad();
            let logits = model.forward(&images)?;
            let (loss, probs) = ops::softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    lr: optimizer.lr,
                });
            }
            loss_sum += loss as f64 * labels.len() as f64;
            seen += labels.len();
            let grad = ops::softmax_cross_entropy_backward(&probs, &labels)?;
            model.backward(&grad)?;
            optimizer.step(model);
        }
        let train_loss = loss_sum / seen as f64;

        let (val_loss, val_accuracy) = validate(model, val_ds, config.batch_size)?;
        val_history.push(val_loss);

        if let Some(old_lr) = scheduler.step(val_loss) {
            report.lr_events.push(LrEvent {
                epoch,
                old_lr,
                new_lr: scheduler.lr,
            });
        }
        optimizer.lr = scheduler.lr;

        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            if let Some(dir) = &config.checkpoint_dir {
                save_checkpoint(model, &dir.join("best.ckpt"))?;
            }
        }
        if let Some(dir) = &config.checkpoint_dir {
            save_checkpoint(model, &dir.join("last.ckpt"))?;
        }

        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
            learning_rate: scheduler.lr,
            wall_clock_secs: if config.deterministic {
                0.0
            } else {
                start.elapsed().as_secs_f64()
            },
        });

        if early_stop_check(&val_history, config.early_stop_patience) {
            report.stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    Ok(report)
}

/// Eval-mode loss and accuracy over a dataset. Never mutates parameters or
/// running statistics.
pub fn validate(
    model: &mut ResEmoteNet,
    dataset: &LabeledDataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    let previous = model.mode();
    model.set_mode(Mode::Eval);
    let mut loss_sum = 0f64;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for (images, labels) in batch_iterator(dataset, batch_size, false, 0)? {
        let logits = model.forward(&images)?;
        let (loss, _) = ops::softmax_cross_entropy(&logits, &labels)?;
        loss_sum += loss as f64 * labels.len() as f64;
        let (n, k) = logits.dims2("validate")?;
        for row in 0..n {
            if argmax(&logits.data()[row * k..(row + 1) * k]) == labels[row] {
                correct += 1;
            }
        }
        seen += labels.len();
    }
    model.set_mode(previous);
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

/// Index of the maximum, ties to the lowest class code.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
