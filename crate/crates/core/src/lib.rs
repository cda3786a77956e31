//! Deep surrogate emulation of spatially indexed simulation output.
//!
//! A simulator maps a low-dimensional input vector `z` to a field observed at
//! fixed spatial sites `s`, alongside site-level covariates `x`. The surrogate
//! decomposes the field as an intercept, a linear covariate term, and a
//! basis expansion whose basis values `B(z)` and coefficient surfaces `eta(s)`
//! are each produced by a small dense network; a multiply layer forms
//! `eta(s)' B(z)` and a dense head maps `[eta'B, x]` to the response.
//! Predictive uncertainty comes from entry-wise dropout masks resampled over
//! the fitted parameters plus a per-draw residual variance.
//!
//! Crate layout:
//! - [`tensor`] / [`rng`]: row-major tensors, matmul/Cholesky/MVN kernels, and
//!   a splittable counter-based RNG;
//! - [`nn`]: dense layers, activations, parameter-shaped dropout masks,
//!   reverse-mode gradients, Adam with exponential learning-rate decay;
//! - [`model`]: the two-branch surrogate, its forward passes, and model-file
//!   persistence;
//! - [`training`]: penalized mini-batch training;
//! - [`inference`]: posterior draws, predictive samples, interval summaries;
//! - [`datagen`]: synthetic scenario generation (B-spline truth and a
//!   mis-specified joint Gaussian-process truth);
//! - [`metrics`]: RMSPE, coverage, interval length, misclassification;
//! - [`baseline`]: spatially varying function-on-scalar ridge regression;
//! - [`data`]: dataset container and the fixed CSV formats.

pub mod baseline;
pub mod bspline;
pub mod data;
pub mod datagen;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::Error;
pub use rng::RngState;
pub use tensor::Tensor;
