//! Mini-batch Adam on the mean-squared objective with best-validation
//! restore and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizationStats, Window};
use crate::error::{Error, Result};
use crate::metrics::compute_metrics;
use crate::model::{loss_node, predict, HrhnParams};
use crate::numerics::{AdamConfig, AdamState, Graph, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seed for batch shuffling.
    pub seed: u64,
    /// Max global gradient norm; off when `None`.
    pub gradient_clip: Option<f64>,
    /// Epochs without validation improvement before stopping; off when `None`.
    pub patience: Option<usize>,
    pub shuffle: bool,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            seed: 0,
            gradient_clip: None,
            patience: None,
            shuffle: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be positive"));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("train.gradient_clip must be positive"));
            }
        }
        if self.patience == Some(0) {
            return Err(Error::config("train.patience must be positive"));
        }
        if self.max_steps == Some(0) {
            return Err(Error::config("train.max_steps must be positive"));
        }
        self.adam().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: usize,
    /// Mean mini-batch objective over the epoch (normalized scale).
    pub train_loss: f64,
    /// Validation RMSE on the raw scale when stats are supplied.
    pub validation_rmse: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept, if validation was run.
    pub best_epoch: Option<usize>,
    pub best_validation_rmse: Option<f64>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// RMSE of `params` on `windows`, on the raw scale when `stats` is given.
pub fn evaluate_rmse<T: Scalar>(
    params: &HrhnParams<T>,
    windows: &[Window],
    stats: Option<&NormalizationStats>,
    batch_size: usize,
) -> Result<f64> {
    let preds = predict(params, windows, batch_size)?;
    let targets: Vec<Vec<f64>> = windows.iter().map(|w| w.target.clone()).collect();
    let report = match stats {
        Some(s) => compute_metrics(&s.denormalize_targets(&preds), &s.denormalize_targets(&targets))?,
        None => compute_metrics(&preds, &targets)?,
    };
    Ok(report.rmse)
}

fn is_divergence(err: &Error) -> bool {
    matches!(
        err.root(),
        Error::NonFinite { .. } | Error::NonFiniteGradient { .. }
    )
}

/// Trains `params` in place.
///
/// On divergence the parameters from before the failing step are kept and
/// [`Error::Diverged`] is returned. When `validation` is nonempty the
/// parameters from the best validation epoch are restored at the end.
pub fn train<T: Scalar>(
    params: &mut HrhnParams<T>,
    train_set: &[Window],
    validation: &[Window],
    config: &TrainConfig,
    stats: Option<&NormalizationStats>,
) -> Result<TrainReport> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty { op: "train" });
    }
    let mut adam = AdamState::new(config.adam(), &params.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport::default();
    let mut best_store = None;
    let mut since_best = 0;

    'epochs: for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let batch: Vec<&Window> = chunk.iter().map(|&i| &train_set[i]).collect();
            let outcome = (|| -> Result<f64> {
                let mut g = Graph::new(&params.store);
                let loss = loss_node(&mut g, params, &batch)?;
                let value = g.value(loss).data()[0].as_f64();
                let grads = g.backward(loss)?;
                drop(g);
                params.store.zero_grad();
                params.store.accumulate(&grads);
                if let Some(clip) = config.gradient_clip {
                    let norm = params.store.grad_norm();
                    if norm > clip {
                        params.store.scale_grads(clip / norm);
                    }
                }
                adam.step(&mut params.store)?;
                Ok(value)
            })();
            match outcome {
                Ok(v) => {
                    loss_sum += v;
                    batches += 1;
                    report.steps += 1;
                }
                Err(e) if is_divergence(&e) => {
                    return Err(Error::Diverged {
                        step: report.steps + 1,
                        epoch,
                    })
                }
                Err(e) => return Err(e),
            }
        }
        if batches == 0 {
            break;
        }
        let validation_rmse = if validation.is_empty() {
            None
        } else {
            Some(evaluate_rmse(params, validation, stats, config.batch_size)?)
        };
        report.epochs.push(EpochLog {
            epoch,
            steps: report.steps,
            train_loss: loss_sum / batches as f64,
            validation_rmse,
        });
        if let Some(rmse) = validation_rmse {
            if report.best_validation_rmse.map_or(true, |b| rmse < b) {
                report.best_validation_rmse = Some(rmse);
                report.best_epoch = Some(epoch);
                best_store = Some(params.store.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if config.patience.is_some_and(|p| since_best >= p) {
                    report.stopped_early = true;
                    break 'epochs;
                }
            }
        }
        if config.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
    }
    if let Some(store) = best_store {
        params.store = store;
    }
    Ok(report)
}
