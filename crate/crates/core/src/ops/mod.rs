//! Forward and backward kernels for the layer zoo.
//!
//! There is no autodiff graph: every forward has an explicit paired
//! backward, and all kernels are pure functions over immutable inputs.

mod activation;
mod conv;
mod loss;
mod matmul;

pub use activation::{flatten, maxpool2d, maxpool2d_backward, relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, conv2d_sliced, conv2d_sliced_backward, conv_out_extent};
pub use loss::softmax_cross_entropy;
pub use matmul::{matmul, matmul_backward};
