//! Forward and backward kernels for the layer types used by every network:
//! valid/full-padded convolution, max pooling, dense, tanh and the softmax
//! cross-entropy head.
//!
//! All kernels are pure functions of their arguments.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{softmax, softmax_cross_entropy, tanh_backward, tanh_forward};
pub use conv::{
    conv2d_backward, conv2d_backward_padded, conv2d_forward, conv2d_forward_padded, ConvGrads,
};
pub use dense::{dense_backward, dense_forward, DenseGrads};
pub use pool::{maxpool_backward, maxpool_forward, PoolEdge, Pooled};
