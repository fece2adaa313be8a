//! Minimal dense-tensor neural network machinery.
//!
//! Layers operate on batched tensors whose leading dimension is the batch.
//! [`Model::forward`] is the single-sample inference path; training goes
//! through [`Model::loss_and_gradients`] and an [`Optimizer`].

mod data;
mod layer;
mod loss;
mod model;
mod optim;
mod tensor;
mod train;

pub use data::{load_csv, load_idx, Dataset, DatasetSource, Split, SyntheticKind};
pub use layer::{Conv2dSpec, Layer, LayerKind};
pub use loss::{argmax, softmax_cross_entropy};
pub use model::{Gradients, Mode, Model, ParamGrad, RunningStats, Trace};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::Tensor;
pub(crate) use train::accuracy_with;
pub use train::{evaluate, train, train_with, NoHooks, TrainConfig, TrainHistory, TrainHooks};
