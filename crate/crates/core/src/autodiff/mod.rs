//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! The free functions here evaluate single operations eagerly; [`Tape`]
//! records the same operations for differentiation.

mod kernels;
mod optim;
mod param;
mod tape;

pub use kernels::{sigmoid, ActivationKind};
pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{mse, Tape, Var};

use crate::error::Result;
use crate::tensor::Tensor;

/// Cross-correlation of a `[C_in, H, W]` input with a `[C_out, C_in, kh, kw]`
/// kernel over a zero-padded input.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    input.ensure_finite("conv2d input")?;
    kernel.ensure_finite("conv2d kernel")?;
    kernels::conv2d_forward(input, kernel, bias, stride, padding)
}

/// Transposed convolution with a `[C_in, C_out, kh, kw]` kernel; the adjoint
/// of [`conv2d`] for the same kernel, stride and padding.
pub fn transposed_conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    input.ensure_finite("transposed_conv2d input")?;
    kernel.ensure_finite("transposed_conv2d kernel")?;
    kernels::conv_transpose2d_forward(input, kernel, bias, stride, padding)
}

/// Non-overlapping max pooling; returns the pooled tensor and the flat
/// input index of each maximum.
pub fn max_pool2d(input: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    input.ensure_finite("max_pool2d input")?;
    kernels::max_pool2d_forward(input, window)
}

pub fn activation(input: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    input.ensure_finite("activation input")?;
    Ok(input.map(|v| kind.apply(v)))
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    mse(pred, target)
}
