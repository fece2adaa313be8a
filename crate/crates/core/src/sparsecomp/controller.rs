use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::retrain::projected_retrain;
use super::threshold::required_zeros;
use crate::error::{Error, Result};
use crate::nn::{evaluate, Dataset, Model, TrainConfig};
use crate::scalar::Scalar;
use crate::sparse_format::{size_bytes, StorageMode};

/// Inputs of the automatic per-layer sparsity controller.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressionPlan {
    /// CSR-accounted model size to reach, in bytes.
    pub target_bytes: usize,
    /// Largest tolerated accuracy drop per accepted iteration, in `[0, 1]`.
    pub max_accuracy_drop: f64,
    pub retrain: TrainConfig,
    /// Fraction of the training data used for retraining, in `(0, 1]`.
    pub data_fraction: f64,
    /// Layers never pruned.
    pub fragile: BTreeSet<usize>,
    /// Seed for the retraining subset.
    pub seed: u64,
    /// Upper bound on retraining runs.
    pub max_iterations: usize,
}

impl CompressionPlan {
    pub fn new(target_bytes: usize) -> Self {
        Self {
            target_bytes,
            max_accuracy_drop: 0.04,
            retrain: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            data_fraction: 1.0,
            fragile: BTreeSet::new(),
            seed: 0,
            max_iterations: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_bytes == 0 {
            return Err(Error::InvalidArgument("target size must be > 0 bytes".into()));
        }
        if !(0.0..=0.2).contains(&self.max_accuracy_drop) {
            return Err(Error::InvalidArgument(format!(
                "accuracy drop threshold {} outside [0, 0.2]",
                self.max_accuracy_drop
            )));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "data fraction {} outside (0, 1]",
                self.data_fraction
            )));
        }
        self.retrain.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccuracySource {
    Validation,
    TrainingSubset,
}

impl AccuracySource {
    pub fn as_str(self) -> &'static str {
        match self {
            AccuracySource::Validation => "validation",
            AccuracySource::TrainingSubset => "training-subset",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IterationOutcome {
    Accepted,
    /// Drop above threshold; the layer keeps its last accepted sparsity.
    Reverted,
    /// Drop above three times the threshold at the initial sparsity.
    Fragile,
}

impl IterationOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            IterationOutcome::Accepted => "accepted",
            IterationOutcome::Reverted => "reverted",
            IterationOutcome::Fragile => "fragile",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub layer: usize,
    pub sparsity: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    pub outcome: IterationOutcome,
    /// Sizes of the model kept after this iteration.
    pub dense_bytes: usize,
    pub csr_bytes: usize,
    pub nonzero_params: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressionReport {
    pub iterations: Vec<IterationRecord>,
    pub accuracy_source: AccuracySource,
    pub baseline_accuracy: f64,
    pub final_accuracy: f64,
    pub original_params: usize,
    /// Nonzero parameters of the input model.
    pub original_nonzero_params: usize,
    pub original_dense_bytes: usize,
    pub final_nonzero_params: usize,
    pub final_csr_bytes: usize,
    pub target_bytes: usize,
    pub target_met: bool,
    pub fragile_layers: Vec<usize>,
    /// Accepted sparsity per layer, `None` where nothing was applied.
    pub layer_sparsity: Vec<Option<f64>>,
}

impl CompressionReport {
    /// Input-model nonzero parameters over remaining nonzero parameters.
    pub fn compression_rate(&self) -> f64 {
        if self.final_nonzero_params == 0 {
            return f64::INFINITY;
        }
        (self.original_nonzero_params as f64 / self.final_nonzero_params as f64).max(1.0)
    }

    /// Original dense bytes over final CSR-accounted bytes.
    pub fn size_ratio(&self) -> f64 {
        self.original_dense_bytes as f64 / self.final_csr_bytes.max(1) as f64
    }

    /// Line-oriented `key=value` rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "accuracy_source={}", self.accuracy_source.as_str());
        let _ = writeln!(s, "baseline_accuracy={:.6}", self.baseline_accuracy);
        let _ = writeln!(s, "final_accuracy={:.6}", self.final_accuracy);
        let _ = writeln!(s, "original_params={}", self.original_params);
        let _ = writeln!(s, "original_nonzero_params={}", self.original_nonzero_params);
        let _ = writeln!(s, "original_dense_bytes={}", self.original_dense_bytes);
        let _ = writeln!(s, "final_nonzero_params={}", self.final_nonzero_params);
        let _ = writeln!(s, "final_csr_bytes={}", self.final_csr_bytes);
        let _ = writeln!(s, "target_bytes={}", self.target_bytes);
        let _ = writeln!(s, "target_met={}", self.target_met);
        let _ = writeln!(s, "compression_rate_params={:.4}", self.compression_rate());
        let _ = writeln!(s, "compression_rate_bytes={:.4}", self.size_ratio());
        let fragile: Vec<String> = self.fragile_layers.iter().map(usize::to_string).collect();
        let _ = writeln!(s, "fragile_layers={}", fragile.join(","));
        for (i, sp) in self.layer_sparsity.iter().enumerate() {
            if let Some(sp) = sp {
                let _ = writeln!(s, "layer_sparsity.{i}={sp:.6}");
            }
        }
        for r in &self.iterations {
            let _ = writeln!(
                s,
                "iteration.{} layer={} sparsity={:.6} accuracy_before={:.6} accuracy_after={:.6} outcome={} dense_bytes={} csr_bytes={} nonzero_params={}",
                r.iteration,
                r.layer,
                r.sparsity,
                r.accuracy_before,
                r.accuracy_after,
                r.outcome.as_str(),
                r.dense_bytes,
                r.csr_bytes,
                r.nonzero_params
            );
        }
        s
    }

    /// Tab-separated table, one row per iteration.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "iteration\tlayer\tsparsity\taccuracy_before\taccuracy_after\toutcome\tdense_bytes\tcsr_bytes\tnonzero_params\n",
        );
        for r in &self.iterations {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}",
                r.iteration,
                r.layer,
                r.sparsity,
                r.accuracy_before,
                r.accuracy_after,
                r.outcome.as_str(),
                r.dense_bytes,
                r.csr_bytes,
                r.nonzero_params
            );
        }
        s
    }
}

/// Non-fragile prunable layer with the most nonzero weights; ties go to the
/// lower index.
pub fn select_next_layer<T: Scalar>(model: &Model<T>, plan: &CompressionPlan) -> Option<usize> {
    select_excluding(model, &plan.fragile)
}

fn select_excluding<T: Scalar>(model: &Model<T>, excluded: &BTreeSet<usize>) -> Option<usize> {
    let mut best: Option<(usize, usize)> = None;
    for (i, l) in model.layers().iter().enumerate() {
        if excluded.contains(&i) {
            continue;
        }
        let Some(w) = l.weight() else { continue };
        let nnz = w.count_nonzero();
        if best.is_none_or(|(_, b)| nnz > b) {
            best = Some((i, nnz));
        }
    }
    best.map(|(i, _)| i)
}

/// Next sparsity strictly increasing the zero count, or `None` at 1.0.
fn escalate(s: f64, total: usize, near_target: bool) -> Option<f64> {
    let now = required_zeros(total, s);
    if now >= total {
        return None;
    }
    let mut step = (1.0 - s) / 2.0;
    if near_target {
        step /= 2.0;
    }
    let mut next = s + step;
    while required_zeros(total, next) <= now {
        step *= 2.0;
        next = (s + step).min(1.0);
        if next >= 1.0 {
            return Some(1.0);
        }
    }
    Some(next)
}

/// Automatic compression: prunes the largest layers first, escalating each
/// layer's sparsity while the accuracy drop per step stays within the plan's
/// threshold, until the CSR size meets the target or no layer is left.
pub fn auto_compress<T: Scalar>(
    model: Model<T>,
    plan: &CompressionPlan,
    data: &Dataset<T>,
    validation: Option<&Dataset<T>>,
) -> Result<(Model<T>, CompressionReport)> {
    plan.validate()?;
    let subset = data.take_fraction(plan.data_fraction, plan.seed)?;
    let (eval_set, source) = match validation {
        Some(v) if !v.is_empty() => (v, AccuracySource::Validation),
        _ => (&subset, AccuracySource::TrainingSubset),
    };
    let delta = plan.max_accuracy_drop;
    let mut model = model;
    let baseline = evaluate(&model, eval_set)?;
    let mut accuracy = baseline;
    let mut excluded = plan.fragile.clone();
    let mut fragile = plan.fragile.clone();
    let mut records = Vec::new();
    let mut runs = 0usize;
    let total_params = model.param_count();
    let original_nonzero = model.nonzero_param_count();

    'outer: while size_bytes(&model, StorageMode::Csr) > plan.target_bytes && runs < plan.max_iterations {
        let Some(layer) = select_excluding(&model, &excluded) else { break };
        let weights = model.layer(layer).weight().map_or(0, |w| w.len());
        let mut s: f64 = if weights * 4 >= total_params { 0.9 } else { 0.95 };
        if let Some(prev) = model.sparsity(layer) {
            match escalate(prev, weights, false) {
                Some(next) => s = s.max(next),
                None => {
                    excluded.insert(layer);
                    continue;
                }
            }
        }
        let mut first = true;
        loop {
            if runs >= plan.max_iterations {
                break 'outer;
            }
            let cfg = TrainConfig {
                seed: plan.retrain.seed.wrapping_add(runs as u64),
                ..plan.retrain.clone()
            };
            let candidate = projected_retrain(model.clone(), layer, s, &subset, &cfg)?;
            let after = evaluate(&candidate, eval_set)?;
            runs += 1;
            let drop = accuracy - after;
            let outcome = if drop <= delta {
                IterationOutcome::Accepted
            } else if first && drop > 3.0 * delta {
                IterationOutcome::Fragile
            } else {
                IterationOutcome::Reverted
            };
            let before = accuracy;
            if outcome == IterationOutcome::Accepted {
                model = candidate;
                accuracy = after;
            }
            records.push(IterationRecord {
                iteration: records.len(),
                layer,
                sparsity: s,
                accuracy_before: before,
                accuracy_after: after,
                outcome,
                dense_bytes: size_bytes(&model, StorageMode::Dense),
                csr_bytes: size_bytes(&model, StorageMode::Csr),
                nonzero_params: model.nonzero_param_count(),
            });
            match outcome {
                IterationOutcome::Accepted => {
                    let csr = size_bytes(&model, StorageMode::Csr);
                    if csr <= plan.target_bytes {
                        break 'outer;
                    }
                    let near = csr as f64 <= 1.5 * plan.target_bytes as f64;
                    match escalate(s, weights, near) {
                        Some(next) => s = next,
                        None => {
                            excluded.insert(layer);
                            break;
                        }
                    }
                }
                IterationOutcome::Fragile => {
                    fragile.insert(layer);
                    excluded.insert(layer);
                    break;
                }
                IterationOutcome::Reverted => {
                    excluded.insert(layer);
                    break;
                }
            }
            first = false;
        }
    }

    let final_csr = size_bytes(&model, StorageMode::Csr);
    let report = CompressionReport {
        iterations: records,
        accuracy_source: source,
        baseline_accuracy: baseline,
        final_accuracy: accuracy,
        original_params: total_params,
        original_nonzero_params: original_nonzero,
        original_dense_bytes: total_params * 4,
        final_nonzero_params: model.nonzero_param_count(),
        final_csr_bytes: final_csr,
        target_bytes: plan.target_bytes,
        target_met: final_csr <= plan.target_bytes,
        fragile_layers: fragile.into_iter().collect(),
        layer_sparsity: (0..model.len()).map(|i| model.sparsity(i)).collect(),
    };
    Ok((model, report))
}
