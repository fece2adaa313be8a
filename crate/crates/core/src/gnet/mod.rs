//! A single global early-exit classifier.
//!
//! Feature maps from every exit point are max-pooled to a common spatial
//! shape, concatenated along the channel axis and classified by one Dense
//! layer. Exiting at point `i` zero-pads the slots of later exits, and the
//! compressed forward pass skips those slots entirely.

mod classifier;
mod eval;
mod features;
mod plan;
mod train;

pub use classifier::{gnet_forward, ForwardMode, GNetModel, GNetOutput};
pub use eval::{evaluate_exits, exit_param_comparison, ExitEvaluation, ExitStats, ParamComparison};
pub use features::{extract_features, extract_features_traced, pool_feature, PaddedFeatureSet};
pub use plan::{plan_pooling, ExitPointSet, ExitPool, PoolPlan};
pub use train::{train_gnet, ExitSampler, GNetHistory, GNetTrainConfig};
