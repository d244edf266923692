//! Self-supervised low-dose CT sinogram denoising from a single noisy scan.
//!
//! Pseudo-samples are built by perturbing the high-frequency part of the
//! sinogram's Fourier amplitude (multiplicative noise or random masking),
//! and a small bias-free CNN learns to map masked samples onto noisy ones.

// `!(x > 0.0)` style guards are deliberate: they reject NaN alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod denoiser;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod pseudosample;
pub mod rng;
pub mod spectrum;
pub mod tomo;

pub use error::{Error, Result};
pub use grid::{Grid2D, GridKind};
pub use rng::RngStream;
