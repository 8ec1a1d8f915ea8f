//! Full-batch training with validation-based early stopping.

use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, Adam};
use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub clip_max_norm: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Train on `ln(1 + y)` instead of raw counts.
    pub log_target: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50_000,
            patience: 500,
            lr: 0.02,
            clip_max_norm: 1.0,
            dropout: 0.0,
            seed: 0,
            log_target: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_owned()));
        if self.patience < 1 {
            return bad("patience must be >= 1");
        }
        if self.patience >= self.max_epochs {
            return bad("patience must be smaller than max_epochs");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be > 0");
        }
        if !(self.clip_max_norm > 0.0) {
            return bad("clip norm must be > 0");
        }
        if self.dropout != 0.0 {
            return bad("dropout is not supported; use 0.0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// A supervised problem over some parameter type.
pub trait Objective {
    type Params: Parameterized;

    /// Training loss and its gradient.
    fn loss_and_grad(&self, params: &Self::Params) -> Result<(f64, Self::Params)>;

    fn val_loss(&self, params: &Self::Params) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<P> {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: P,
    pub history: History,
}

/// Adam over full-batch gradients clipped to `clip_max_norm`. After each
/// update the validation loss is computed; training stops once it has not
/// improved for `patience` epochs and the best checkpoint is returned.
pub fn train<O: Objective>(objective: &O, init: O::Params, config: &TrainConfig) -> Result<TrainOutcome<O::Params>> {
    config.validate()?;
    let mut params = init;
    let mut adam = Adam::new(config.lr);
    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best = params.clone();

    let diverged = |epoch: usize, reason: String, history: &History| Error::Diverged {
        epoch,
        reason,
        history: Box::new(history.clone()),
    };

    for epoch in 1..=config.max_epochs {
        let (loss, mut grads) = objective.loss_and_grad(&params)?;
        if !loss.is_finite() {
            return Err(diverged(epoch, format!("training loss is {loss}"), &history));
        }
        if !grads.all_finite() {
            return Err(diverged(epoch, "non-finite gradient".into(), &history));
        }
        clip_grad_norm(&mut grads, config.clip_max_norm);
        adam.step(&mut params, &grads);

        let val = objective.val_loss(&params)?;
        if !val.is_finite() {
            return Err(diverged(epoch, format!("validation loss is {val}"), &history));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_loss: val,
        });
        if val < history.best_val_loss {
            history.best_val_loss = val;
            history.best_epoch = epoch;
            best.clone_from(&params);
        } else if epoch - history.best_epoch >= config.patience {
            history.stopped_early = true;
            break;
        }
    }
    log::debug!(
        "training finished after {} epochs, best epoch {} (val {:.4})",
        history.epochs.len(),
        history.best_epoch,
        history.best_val_loss
    );
    Ok(TrainOutcome { best, history })
}
