//! Rotary view encoding: per-patch world rotations applied to 3-channel
//! subvectors of queries and keys, co-resident with a standard 3D RoPE.
//!
//! When both encodings touch the same channels, RoPE is applied first and the
//! view rotation second. [`encode_tokens`] fixes that order for callers.

mod layout;
mod rope;
mod transform;

pub use layout::{ChannelLayout, LayoutMode};
pub use rope::{apply_rope3d, rope3d_in_place, rope_pairs, RopePair, RopePosition};
pub use transform::{
    apply_viewrope, relative_score, relative_score_via_relative_rotation, rotate_tokens, vr_transform,
    vr_transform_in_place, Provenance, RotatedQK,
};

use nalgebra::Matrix3;

use crate::tensor::TokenTensor;
use crate::{Real, Result};

/// Which positional encodings are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingFlags {
    pub rope: bool,
    pub viewrope: bool,
}

/// RoPE (if enabled) followed by the view rotation (if enabled), in place.
pub fn encode_tokens<T: Real>(
    tokens: &mut TokenTensor<T>,
    positions: &[RopePosition],
    rotations: &[Matrix3<f64>],
    layout: &ChannelLayout,
    flags: EncodingFlags,
) -> Result<()> {
    if flags.rope {
        rope3d_in_place(tokens, positions, layout, false)?;
    }
    if flags.viewrope {
        rotate_tokens(tokens, rotations, layout, false)?;
    }
    Ok(())
}

/// Adjoint of [`encode_tokens`]; both stages are orthogonal so this is also the inverse.
pub fn encode_tokens_adjoint<T: Real>(
    tokens: &mut TokenTensor<T>,
    positions: &[RopePosition],
    rotations: &[Matrix3<f64>],
    layout: &ChannelLayout,
    flags: EncodingFlags,
) -> Result<()> {
    if flags.viewrope {
        rotate_tokens(tokens, rotations, layout, true)?;
    }
    if flags.rope {
        rope3d_in_place(tokens, positions, layout, true)?;
    }
    Ok(())
}
