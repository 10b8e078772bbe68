//! Bit-regularized quantization-aware training.
//!
//! Every layer of a small convolutional network keeps high-precision
//! parameters `W` alongside an integer bit-width `B` and the projection of
//! `W` onto a uniform grid of `2^B + 1` levels spanning `[min W, max W]`.
//! Training minimizes the classification loss plus a penalty on the
//! quantization error and on the number of representable values, updating
//! `W` by gradient descent and `B` by a thresholded sign step, then
//! re-projecting.
//!
//! Modules:
//! - [`kernels`] and [`tensor`]: dense tensors and layer kernels.
//! - [`quantize`]: the uniform grid quantizer, its error and gradients, and
//!   the k-means baseline quantizer.
//! - [`net`]: architectures, presets and whole-network forward/backward.
//! - [`optim`]: the regularized objective and the training step.
//! - [`data`]: MNIST IDX and CIFAR-10 binary loaders, batching.
//! - [`modelfmt`]: bit-packed model files and metrics CSV.
//! - [`experiment`]: train / eval / sweep drivers used by the CLI.

pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod modelfmt;
pub mod net;
pub mod optim;
pub mod quantize;
pub mod tensor;

pub use error::{Error, FormatError, LoadError, Result};
pub use tensor::{Scalar, Tensor};
