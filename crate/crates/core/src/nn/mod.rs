//! Layer kernels shared by every network in the pipeline.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod pool;
pub mod sgd;

use rand::Rng;

use crate::tensor::{Scalar, Tensor};

pub use activation::{relu, softmax, softmax_cross_entropy, Activation};
pub use conv::{
    conv3d_backward, conv3d_backward_cached, conv3d_forward, conv3d_output_shape, deconv3d, deconv3d_backward,
    Conv3dLayer, ConvGrads, Padding,
};
pub use dense::{DenseGrads, DenseLayer};
pub use pool::{
    maxpool3d, pooled_shape, unpool3d, unpool3d_backward, upsample_nearest, upsample_nearest_adjoint, PoolRecord,
};
pub use sgd::{sgd_step, SgdConfig};

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-limit..=limit)))
}
