//! Dense f64 numeric kernels: forward and backward passes for 1-D
//! convolution, max pooling, ReLU, fully-connected layers, softmax,
//! cross-entropy, and the Adam optimizer.
//!
//! All functions are pure over caller-owned buffers; backward passes
//! accumulate (`+=`) into caller-provided gradient buffers so multiple
//! consumers of one activation can add their contributions.

mod activation;
mod adam;
mod conv;
mod dense;
mod loss;
mod pool;
mod tensor;

pub use activation::{relu_backward, relu_forward, softmax};
pub use adam::{adam_step, AdamState};
pub use conv::{conv1d_backward, conv1d_forward, conv1d_output_length, ConvLayerParams};
pub use dense::{dense_backward, dense_forward, DenseLayerParams};
pub use loss::{cross_entropy_loss, softmax_cross_entropy_grad, PROB_CLAMP};
pub use pool::{maxpool1d_backward, maxpool1d_forward, maxpool1d_output_length};
pub use tensor::Tensor2;
