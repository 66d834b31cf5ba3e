//! Forward and backward passes for the fully convolutional networks.
//!
//! Everything is f64 and NCHW. Convolutions are evaluated as im2col + GEMM;
//! transposed convolutions reuse the same machinery through the usual
//! adjointness between `im2col` and `col2im`.

mod batchnorm;
mod conv;
mod network;

pub use batchnorm::BatchNorm;
pub use network::{
    discriminator_forward, generator_forward, init_weights, ForwardPass, Gradients, LayerGrads,
    LayerParams, Mode, Network, NoiseGrid,
};

/// NCHW activation tensor.
pub type Tensor4 = ndarray::Array4<f64>;
