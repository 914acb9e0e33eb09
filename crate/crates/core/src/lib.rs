//! Geometry-aware rotary position encoding for posed video tokens,
//! frame-aligned block-sparse attention, projective loop-closure
//! diagnostics and camera-trajectory synthesis.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::single_range_in_vec_init)]

pub mod attention;
pub mod error;
pub mod geometry;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;
pub mod tensor;
pub mod toymodel;
pub mod trajgen;
pub mod viewrope;
pub mod warp;

pub use tensor::TokenTensor;
