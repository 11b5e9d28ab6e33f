//! Layer primitives for the multitask U-Net: convolution, pooling,
//! upsampling, channel concatenation, fully connected layers and losses.
//!
//! All layers are methods on [`Tape`](crate::tensor::Tape) so they record
//! their backward pass the same way the elementwise operations do.

mod conv;
mod linear;
mod loss;
mod spatial;

pub use conv::Conv2dParams;
pub use linear::LinearParams;
pub use loss::{nll_rows, softmax_rows, ClassWeights};
pub use spatial::Pooled;
