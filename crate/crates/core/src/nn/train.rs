use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::Dataset;
use super::model::{Mode, Model};
use super::optim::{Optimizer, OptimizerKind};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 5e-3,
            optimizer: OptimizerKind::Sgd,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the config. Zero epochs is accepted and means "no training".
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    /// Validation loss per epoch, when a validation split was supplied.
    pub validation_loss: Vec<f64>,
}

/// Callbacks around each optimizer step and epoch.
pub trait TrainHooks<T: Scalar> {
    /// Runs right after every optimizer step (projection goes here).
    fn after_step(&mut self, _model: &mut Model<T>) {}
    fn after_epoch(&mut self, _epoch: usize, _model: &Model<T>) {}
}

pub struct NoHooks;

impl<T: Scalar> TrainHooks<T> for NoHooks {}

/// Minibatch training with softmax cross-entropy.
pub fn train<T: Scalar>(
    mut model: Model<T>,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    cfg: &TrainConfig,
) -> Result<(Model<T>, TrainHistory)> {
    let history = train_with(&mut model, data, validation, cfg, &mut NoHooks)?;
    Ok((model, history))
}

pub fn train_with<T: Scalar>(
    model: &mut Model<T>,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    cfg: &TrainConfig,
    hooks: &mut dyn TrainHooks<T>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut history = TrainHistory::default();
    if cfg.epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let prior_mode = model.mode();
    for epoch in 0..cfg.epochs {
        model.set_mode(Mode::Training);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = data.batch(chunk)?;
            let (loss, grads) = model.loss_and_gradients(&x, &y, &mut rng)?;
            if !loss.is_finite() {
                model.set_mode(prior_mode);
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            opt.step(model, &grads);
            hooks.after_step(model);
            total += loss.to_f64_lossy() * chunk.len() as f64;
        }
        model.set_mode(Mode::Evaluation);
        history.train_loss.push(total / data.len() as f64);
        if let Some(val) = validation {
            history.validation_loss.push(mean_loss(model, val)?);
        }
        hooks.after_epoch(epoch, model);
    }
    model.set_mode(prior_mode);
    Ok(history)
}

/// Mean inference-mode cross-entropy over a dataset.
pub(crate) fn mean_loss<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        let logits = model.forward(x)?;
        total += super::loss::softmax_cross_entropy(logits.data(), y).0.to_f64_lossy();
    }
    Ok(total / data.len() as f64)
}

/// Exact-match argmax accuracy in `[0, 1]`.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>) -> Result<f64> {
    accuracy_with(data, |x| model.forward(x))
}

pub(crate) fn accuracy_with<T: Scalar>(
    data: &Dataset<T>,
    mut predict: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &y) in data.inputs().iter().zip(data.labels()) {
        if predict(x)?.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
