//! Tensors and the differentiable kernels behind the chewing-detection network.

mod gradcheck;
mod layers;
mod scalar;
mod tensor;

pub use gradcheck::{
    grad_check, relative_error, BranchHasher, Differentiable, GradCheckOptions, GradCheckReport, GroupError,
};
pub use layers::{
    adaptive_bins, adaptive_maxpool, adaptive_maxpool_backward, conv1d_backward, conv1d_forward,
    dense_backward, dense_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    sigmoid, sigmoid_backward, sigmoid_forward, ConvGrads, DenseGrads, PoolIndices,
};
pub(crate) use layers::conv1d_backward_impl;
pub use scalar::{Precision, Scalar};
pub(crate) use scalar::{gemm, Mat};
pub use tensor::Tensor;
