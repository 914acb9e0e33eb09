use serde::{Deserialize, Serialize};

use super::ChannelLayout;
use crate::tensor::TokenTensor;
use crate::{Error, Real, Result};

/// Integer (time, row, column) position of a token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RopePosition {
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl RopePosition {
    pub fn new(t: usize, h: usize, w: usize) -> Self {
        Self { t, h, w }
    }
}

/// One rotated channel pair `(channel, channel + 1)` driven by a position axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopePair {
    pub channel: usize,
    /// 0 = time, 1 = row, 2 = column.
    pub axis: usize,
    pub frequency: f64,
}

/// Interleaved pairs of each band with frequencies `base^(-2j / band_len)`.
///
/// In `HwDimReplace` mode pairs touching a view-rotation band get frequency 0.
pub fn rope_pairs(layout: &ChannelLayout) -> Vec<RopePair> {
    let replace = layout.mode == super::LayoutMode::HwDimReplace;
    let mut pairs = Vec::new();
    for (axis, band) in [&layout.t_band, &layout.h_band, &layout.w_band].into_iter().enumerate() {
        let n = band.len();
        for j in 0..n / 2 {
            let channel = band.start + 2 * j;
            let zeroed = replace && (layout.in_viewrope_band(channel) || layout.in_viewrope_band(channel + 1));
            let frequency = if zeroed {
                0.0
            } else {
                layout.rope_base.powf(-(2.0 * j as f64) / n as f64)
            };
            pairs.push(RopePair { channel, axis, frequency });
        }
    }
    pairs
}

/// Applies (or undoes, with `inverse`) the 3D rotary encoding in place.
pub fn rope3d_in_place<T: Real>(
    tokens: &mut TokenTensor<T>,
    positions: &[RopePosition],
    layout: &ChannelLayout,
    inverse: bool,
) -> Result<()> {
    layout.validate()?;
    if positions.len() != tokens.len() {
        return Err(Error::Dimension(format!(
            "{} positions for {} tokens",
            positions.len(),
            tokens.len()
        )));
    }
    if tokens.dim() != layout.total_dims {
        return Err(Error::Dimension(format!(
            "tokens have {} channels, layout expects {}",
            tokens.dim(),
            layout.total_dims
        )));
    }
    let pairs = rope_pairs(layout);
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut table = vec![(T::zero(), T::one()); pairs.len()];
    for (l, pos) in positions.iter().enumerate() {
        let coords = [pos.t, pos.h, pos.w];
        for (slot, p) in table.iter_mut().zip(&pairs) {
            let (s, c) = (sign * coords[p.axis] as f64 * p.frequency).sin_cos();
            *slot = (T::from_f64(s), T::from_f64(c));
        }
        for h in 0..tokens.heads() {
            let v = tokens.vector_mut(l, h);
            for (&(s, c), p) in table.iter().zip(&pairs) {
                let (a, b) = (v[p.channel], v[p.channel + 1]);
                v[p.channel] = a * c - b * s;
                v[p.channel + 1] = a * s + b * c;
            }
        }
    }
    Ok(())
}

/// Standard 3D rotary encoding (time/row/column bands, base 10000).
pub fn apply_rope3d<T: Real>(
    tokens: &TokenTensor<T>,
    positions: &[RopePosition],
    layout: &ChannelLayout,
) -> Result<TokenTensor<T>> {
    let mut out = tokens.clone();
    rope3d_in_place(&mut out, positions, layout, false)?;
    Ok(out)
}
