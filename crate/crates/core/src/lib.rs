//! From-scratch CNN library for 8-class image aesthetic score prediction
//! (integer scores 2 through 9).
//!
//! The crate owns the full pipeline: a small differentiable operator set
//! (convolution, batch normalization, a sigmoid-gated block, max pooling,
//! fully-connected layers, softmax cross-entropy, SGD with momentum), the
//! four B-family network variants built from those operators, training with
//! a repetitive low-likelihood sample dropping loop (RSRL) for imbalanced
//! data, weighted probability fusion of two models with a grid sweep over
//! the fusion weights, macro precision/recall/F1 evaluation, and attention
//! map extraction (focus of first perception and averaged intensity of
//! regions) from the last convolutional layer.
//!
//! Numeric code is generic over the scalar type through [`Scalar`]; the
//! concrete aliases below pin the two supported precisions. 32-bit floats
//! are the working precision for training and checkpoints, 64-bit is used
//! where high-precision verification is needed.

pub mod attention;
pub mod checkpoint;
pub mod dataio;
pub mod ensemble;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Rank-4 tensor at working precision.
pub type Tensor32 = tensor::Tensor<f32>;
/// Rank-4 tensor at verification precision.
pub type Tensor64 = tensor::Tensor<f64>;
/// Network at working precision (the precision checkpoints store).
pub type Network32 = model::Network<f32>;
/// Network at verification precision.
pub type Network64 = model::Network<f64>;
