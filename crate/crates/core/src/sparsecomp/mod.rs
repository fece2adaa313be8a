//! Sparsity-imposed compression.
//!
//! Pruning is a projection: after every gradient step the constrained weight
//! matrices are hard-thresholded back onto their sparsity sets. The
//! controller in [`auto_compress`] picks layers largest-first, escalates
//! their sparsity while the accuracy holds, and marks layers that cannot
//! tolerate pruning as fragile. [`separate_for_budget`] factorizes the
//! layers that dominate the double-buffered activation memory.

mod buffer;
mod controller;
mod retrain;
mod separation;
mod threshold;

pub use buffer::{buffer_profile, BufferProfile, LayerBuffer};
pub use controller::{
    auto_compress, select_next_layer, AccuracySource, CompressionPlan, CompressionReport, IterationOutcome,
    IterationRecord,
};
pub use retrain::{projected_retrain, projected_retrain_with};
pub use separation::{
    estimate_rank, estimate_rank_from_singular_values, separate_conv, separate_conv_layer, separate_dense_layer,
    separate_fc, separate_for_budget, singular_values, SeparationOutcome, SeparationStep, TuckerFactors,
};
pub use threshold::{hard_threshold, hard_threshold_in_place, required_zeros, SparsityConstraint};
