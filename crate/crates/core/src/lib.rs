//! Kilobyte-budget neural networks for batteryless devices.
//!
//! The crate bundles five pieces that together take a small trained classifier
//! down to a few kilobytes and run it under harvested power:
//!
//! - [`nn`]: tensors, layers, backpropagation, optimizers and datasets.
//! - [`sparsecomp`]: hard thresholding, projected retraining, the automatic
//!   per-layer sparsity controller, and SVD/Tucker layer separation.
//! - [`gnet`]: a single global early-exit classifier fed by pooled,
//!   zero-padded features from every exit point.
//! - [`sparse_format`]: CSR storage, byte accounting, bundles and C headers.
//! - [`sim`]: an event-driven capacitor/harvester simulator with
//!   double-buffered layer commits and energy-aware exit policies.
//!
//! Numeric code is generic over [`Scalar`] (`f32` and `f64`); the aliases
//! below fix the 32-bit instantiation used by the serialized formats.

pub mod error;
pub mod gnet;
pub mod nn;
pub mod scalar;
pub mod sim;
pub mod sparse_format;
pub mod sparsecomp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Model32 = nn::Model<f32>;
pub type Model64 = nn::Model<f64>;
pub type Dataset32 = nn::Dataset<f32>;
pub type Dataset64 = nn::Dataset<f64>;
pub type CsrMatrix32 = sparse_format::CsrMatrix<f32>;
pub type GNet32 = gnet::GNetModel<f32>;
pub type GNet64 = gnet::GNetModel<f64>;
