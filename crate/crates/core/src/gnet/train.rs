use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::classifier::GNetModel;
use super::features::full_features;
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Dataset, Mode, Optimizer, OptimizerKind, Tensor, TrainConfig};
use crate::scalar::Scalar;

/// Seeded uniform draw of exit indices in `1..=n`.
#[derive(Clone, Debug)]
pub struct ExitSampler {
    n: usize,
    rng: ChaCha8Rng,
}

impl ExitSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("exit sampler needs n >= 1".into()));
        }
        Ok(Self {
            n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn next_exit(&mut self) -> usize {
        self.rng.random_range(1..=self.n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GNetTrainConfig {
    pub train: TrainConfig,
    /// Consecutive non-improving epochs tolerated; 0 behaves like 1.
    pub patience: usize,
}

impl Default for GNetTrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                epochs: 100,
                batch_size: 32,
                learning_rate: 5e-3,
                optimizer: OptimizerKind::adam(),
                weight_decay: 0.0,
                seed: 0,
            },
            patience: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GNetHistory {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Epoch (0-based) of the returned classifier.
    pub best_epoch: Option<usize>,
    /// Exit drawn for each batch, in order.
    pub exit_draws: Vec<usize>,
}

/// Pooled features of every sample with all slots valid.
fn precompute<T: Scalar>(model: &crate::nn::Model<T>, g: &GNetModel<T>, data: &Dataset<T>) -> Result<Vec<Vec<T>>> {
    data.inputs().iter().map(|x| full_features(model, &g.plan, x)).collect()
}

/// Classifier input for exit `exit`: slots past it zeroed.
fn masked<T: Scalar>(full: &[T], keep: usize) -> impl Iterator<Item = T> + '_ {
    full.iter().enumerate().map(move |(i, &v)| if i < keep { v } else { T::zero() })
}

/// Mean validation loss with sample `j` forced to exit `1 + (j mod n)`.
fn validation_loss<T: Scalar>(g: &GNetModel<T>, feats: &[Vec<T>], labels: &[usize]) -> Result<f64> {
    let n = g.plan.len();
    let len = g.plan.feature_len();
    let mut total = 0.0;
    for (j, (f, &y)) in feats.iter().zip(labels).enumerate() {
        let keep = g.plan.valid_len(1 + j % n);
        let x = Tensor::new(vec![len], masked(f, keep).collect())?;
        let logits = g.classifier.forward(&x)?;
        total += softmax_cross_entropy(logits.data(), y).0.to_f64_lossy();
    }
    Ok(total / feats.len() as f64)
}

/// Trains the global exit classifier over a frozen baseline.
///
/// Each batch draws one exit uniformly; its samples see the features of
/// exits up to the drawn one and zeros after. Only the classifier changes.
/// Training stops once `patience` consecutive epochs fail to improve the
/// validation loss, returning the best classifier seen.
pub fn train_gnet<T: Scalar>(
    model: &crate::nn::Model<T>,
    g: GNetModel<T>,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    cfg: &GNetTrainConfig,
) -> Result<(GNetModel<T>, GNetHistory)> {
    let Some(validation) = validation.filter(|v| !v.is_empty()) else {
        return Err(Error::InvalidArgument(
            "global exit training needs a non-empty validation split for early stopping".into(),
        ));
    };
    cfg.train.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_feats = precompute(model, &g, data)?;
    let val_feats = precompute(model, &g, validation)?;
    let n = g.plan.len();
    let len = g.plan.feature_len();
    let mut g = g;
    g.classifier.set_mode(Mode::Evaluation);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut sampler = ExitSampler::new(n, cfg.train.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let mut opt = Optimizer::new(cfg.train.optimizer, cfg.train.learning_rate, cfg.train.weight_decay);
    let mut history = GNetHistory::default();
    let mut best = (f64::INFINITY, g.clone());
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.train.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let exit = sampler.next_exit();
            history.exit_draws.push(exit);
            let keep = g.plan.valid_len(exit);
            let mut xs = Vec::with_capacity(chunk.len() * len);
            for &i in chunk {
                xs.extend(masked(&train_feats[i], keep));
            }
            let x = Tensor::new(vec![chunk.len(), len], xs)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            g.classifier.set_mode(Mode::Training);
            let (loss, grads) = g.classifier.loss_and_gradients(&x, &labels, &mut rng)?;
            g.classifier.set_mode(Mode::Evaluation);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            opt.step(&mut g.classifier, &grads);
            total += loss.to_f64_lossy() * chunk.len() as f64;
        }
        history.train_loss.push(total / data.len() as f64);
        let val = validation_loss(&g, &val_feats, validation.labels())?;
        history.validation_loss.push(val);
        if val < best.0 {
            best = (val, g.clone());
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                break;
            }
        }
    }
    Ok((best.1, history))
}
