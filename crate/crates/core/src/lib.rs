//! Any-width convolutional networks on the CPU.
//!
//! One trained model, any operating width: triangular channel masks make
//! every channel-prefix sub-network self-consistent, so a single set of
//! batch-normalization statistics serves all widths. The crate bundles the
//! layer kernels with explicit backward passes, the width machinery, the
//! LeNet-3C1L model family (any-width, standard, switchable-BN, and
//! calibrated variants), training loops (fixed multi-width and random width
//! sampling), an activation-statistics laboratory, width-accuracy sweeps,
//! and IDX / CIFAR binary dataset loaders.
//!
//! All numerics are generic over the scalar type: `f32` for production
//! training, `f64` for finite-difference gradient checking.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod ops;
pub mod rng;
pub mod scalar;
pub mod statlab;
pub mod tensor;
pub mod train;
pub mod widths;

pub use error::{Error, Result};
pub use scalar::{Dtype, Scalar};
pub use tensor::{Batch, Tensor};
pub use widths::WidthFactor;

/// Production tensor type.
pub type Tensor32 = Tensor<f32>;
/// Gradient-check tensor type.
pub type Tensor64 = Tensor<f64>;
/// Production model type.
pub type Model32 = model::Model<f32>;
/// Gradient-check model type.
pub type Model64 = model::Model<f64>;
