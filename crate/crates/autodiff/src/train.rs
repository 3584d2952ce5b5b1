//! Mini-batch training with Adam, plateau LR decay and early stopping.

use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adam::{Adam, AdamConfig};
use crate::error::AutodiffError;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Stop after this many epochs without a `min_delta` improvement.
    pub early_stop_patience: usize,
    pub min_delta: f64,
    /// Multiply the learning rate by this after `plateau_patience` stale epochs.
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub seed: u64,
    /// Optional cap on optimizer steps; the epoch in progress is validated and training ends.
    pub max_steps: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            max_epochs: 100,
            batch_size: 8,
            learning_rate: 1e-4,
            early_stop_patience: 10,
            min_delta: 1e-5,
            plateau_factor: 0.5,
            plateau_patience: 5,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Invalid("batch_size must be >= 1".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(TrainError::Invalid(format!("plateau factor {} outside (0, 1)", self.plateau_factor)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.max_epochs == 0 {
            return Err(TrainError::Invalid("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// A supervised task: how to turn a batch of samples into a scalar loss.
pub trait Objective {
    type Sample;

    fn batch_loss(&self, graph: &mut Graph<f32>, params: &ParamStore<f32>, batch: &[&Self::Sample]) -> Result<Var, AutodiffError>;

    /// Sample-weighted mean of batch losses over `samples`.
    fn validation_loss(&self, params: &ParamStore<f32>, samples: &[Self::Sample], batch_size: usize) -> Result<f64, AutodiffError> {
        let mut total = 0.0;
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&Self::Sample> = chunk.iter().collect();
            let mut g = Graph::new();
            let loss = self.batch_loss(&mut g, params, &refs)?;
            total += g.value(loss).item() as f64 * chunk.len() as f64;
        }
        Ok(total / samples.len() as f64)
    }

    /// Extra per-epoch validation metrics recorded in the history.
    fn epoch_metrics(&self, _params: &ParamStore<f32>, _val: &[Self::Sample]) -> Result<Vec<(String, f64)>, AutodiffError> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub metrics: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStopped,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub best_params: ParamStore<f32>,
    /// 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub steps: usize,
    pub stop_reason: StopReason,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, last_good: Box<TrainOutcome> },
    #[error(transparent)]
    Engine(#[from] AutodiffError),
}

/// Step-level learning-rate and stopping bookkeeping, separated from the
/// optimisation loop so the rules can be checked on scripted loss curves.
#[derive(Debug, Clone)]
pub struct ScheduleTracker {
    best: f64,
    best_epoch: usize,
    stale_for_plateau: usize,
    lr: f64,
    factor: f64,
    plateau_patience: usize,
    early_stop_patience: usize,
    min_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochVerdict {
    pub improved: bool,
    pub lr_reduced: bool,
    pub stop: bool,
}

impl ScheduleTracker {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            best: f64::INFINITY,
            best_epoch: 0,
            stale_for_plateau: 0,
            lr: schedule.learning_rate,
            factor: schedule.plateau_factor,
            plateau_patience: schedule.plateau_patience,
            early_stop_patience: schedule.early_stop_patience,
            min_delta: schedule.min_delta,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> EpochVerdict {
        let improved = val_loss < self.best - self.min_delta;
        let mut lr_reduced = false;
        if improved {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale_for_plateau = 0;
        } else {
            self.stale_for_plateau += 1;
            if self.stale_for_plateau >= self.plateau_patience {
                self.lr *= self.factor;
                self.stale_for_plateau = 0;
                lr_reduced = true;
            }
        }
        let stop = epoch - self.best_epoch >= self.early_stop_patience;
        EpochVerdict { improved, lr_reduced, stop }
    }
}

pub fn run_training<O: Objective>(
    objective: &O,
    mut params: ParamStore<f32>,
    train: &[O::Sample],
    val: &[O::Sample],
    schedule: &TrainSchedule,
) -> Result<TrainOutcome, TrainError> {
    schedule.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Invalid("training and validation splits must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(schedule.learning_rate), &params);
    let mut tracker = ScheduleTracker::new(schedule);
    let mut outcome = TrainOutcome {
        best_params: params.clone(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        history: Vec::new(),
        steps: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=schedule.max_epochs {
        let lr = tracker.lr();
        adam.set_learning_rate(lr);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut hit_step_cap = false;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<&O::Sample> = chunk.iter().map(|&i| &train[i]).collect();
            let mut g = Graph::new();
            let loss = objective.batch_loss(&mut g, &params, &batch)?;
            let value = g.value(loss).item() as f64;
            let diverged = |outcome: TrainOutcome| TrainError::Diverged { epoch, step: outcome.steps, last_good: Box::new(outcome) };
            if !value.is_finite() {
                return Err(diverged(outcome));
            }
            let grads = g.backward(loss)?.for_params(&params);
            drop(g);
            match adam.step(&mut params, &grads) {
                Ok(()) => {}
                Err(AutodiffError::NonFiniteGradient(_)) => return Err(diverged(outcome)),
                Err(e) => return Err(e.into()),
            }
            outcome.steps += 1;
            loss_sum += value * chunk.len() as f64;
            seen += chunk.len();
            if schedule.max_steps.is_some_and(|cap| outcome.steps >= cap) {
                hit_step_cap = true;
                break;
            }
        }
        let val_loss = objective.validation_loss(&params, val, schedule.batch_size)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Diverged { epoch, step: outcome.steps, last_good: Box::new(outcome) });
        }
        let metrics = objective.epoch_metrics(&params, val)?;
        let record = EpochRecord { epoch, train_loss: loss_sum / seen.max(1) as f64, val_loss, lr, metrics };
        info!(
            "epoch {epoch}: train {:.6} val {:.6} lr {:.2e}{}",
            record.train_loss,
            val_loss,
            lr,
            record.metrics.iter().map(|(k, v)| format!(" {k} {v:.4}")).collect::<String>()
        );
        outcome.history.push(record);
        let verdict = tracker.observe(epoch, val_loss);
        if verdict.improved {
            outcome.best_params = params.clone();
            outcome.best_epoch = epoch;
            outcome.best_val_loss = val_loss;
        }
        if hit_step_cap {
            outcome.stop_reason = StopReason::MaxSteps;
            break;
        }
        if verdict.stop {
            outcome.stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    Ok(outcome)
}

/// Writes `epoch,train_loss,val_loss,lr` plus any metric columns.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    write!(out, "epoch,train_loss,val_loss,lr")?;
    if let Some(first) = history.first() {
        for (name, _) in &first.metrics {
            write!(out, ",{name}")?;
        }
    }
    writeln!(out)?;
    for r in history {
        write!(out, "{},{:.8},{:.8},{:e}", r.epoch, r.train_loss, r.val_loss, r.lr)?;
        for (_, v) in &r.metrics {
            write!(out, ",{v:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
