//! Noise-robust vibration fault diagnosis toolkit.
//!
//! The crate provides the full pipeline for diagnosing rotating-machinery
//! faults from raw vibration signals buried in heavy noise:
//!
//! * [`tensor`] — dense tensors with a dynamically built reverse-mode
//!   differentiation tape and a finite-difference gradient checker.
//! * [`spectral`] — real-input DFT/inverse pair, learnable complex filter
//!   weights, and the filter-reconstruct operator that lets a network learn
//!   which frequency bands to keep.
//! * [`nn`] — 1-D convolution, pooling, batch normalization, GELU, softmax
//!   and linear layers built on the tape.
//! * [`model`] — the classifier: a spectral-filter embedding, multiscale
//!   convolutional attention blocks with time–frequency feed-forward layers,
//!   and progressive downsampling between blocks.
//! * [`data`] — synthetic bearing-fault signal generator with calibrated
//!   noise injection, normalization, splits, and CSV round-tripping.
//! * [`train`] — Adam, cross-entropy, and the training loop.
//! * [`metrics`] — accuracy, confusion counts, and class-scatter ratios.
//! * [`checkpoint`] — binary model serialization.

pub mod checkpoint;
pub mod data;
pub mod error;
mod fft;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Scalar element type. 64-bit by default; the `f32` feature trades
/// precision for speed. Tests and serialized formats assume f64.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

pub(crate) fn erf(x: Real) -> Real {
    #[cfg(not(feature = "f32"))]
    {
        libm::erf(x)
    }
    #[cfg(feature = "f32")]
    {
        libm::erff(x)
    }
}
