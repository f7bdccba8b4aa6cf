//! The differentiable operator set the networks are built from.
//!
//! Design rules shared by every operator:
//! - forward functions validate shapes and reject non-finite inputs,
//! - backward functions take the forward cache they need explicitly and
//!   never mutate parameters,
//! - channel statistics and loss reductions accumulate at 64-bit precision
//!   regardless of the working precision; dot products stay in the working
//!   precision for speed.

pub mod batchnorm;
pub mod conv;
pub mod fc;
pub mod gate;
pub mod loss;
pub mod pool;
pub mod sgd;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormOutput, BatchNormParams};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use fc::{fc_backward, fc_forward, FcGrads, FcParams};
pub use gate::{gated_block_backward, gated_block_forward, GatedBlockGrads, GatedBlockForward};
pub use loss::{softmax, softmax_cross_entropy_batch, softmax_cross_entropy_sample, CrossEntropyBatch};
pub use pool::{maxpool_backward, maxpool_forward, PoolForward};
pub use sgd::sgd_step_slice;

/// Whether batch statistics are computed fresh (training) or the stored
/// running statistics are used (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
