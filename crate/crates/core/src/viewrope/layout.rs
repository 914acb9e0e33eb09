use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Where the view-rotation channels live relative to the 3D RoPE bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// Lowest-frequency channels of the temporal band; RoPE stays active there.
    TDimLowFreq,
    /// Lowest-frequency channels of both spatial bands; RoPE stays active there.
    HwDimLowFreq,
    /// Same channels as `HwDimLowFreq`, with the RoPE angles on them forced to zero.
    HwDimReplace,
    /// Every complete channel triple of the head.
    AllDims,
}

impl LayoutMode {
    pub const ALL: [LayoutMode; 4] = [
        LayoutMode::TDimLowFreq,
        LayoutMode::HwDimLowFreq,
        LayoutMode::HwDimReplace,
        LayoutMode::AllDims,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LayoutMode::TDimLowFreq => "t_dim_low_freq",
            LayoutMode::HwDimLowFreq => "hw_dim_low_freq",
            LayoutMode::HwDimReplace => "hw_dim_replace",
            LayoutMode::AllDims => "all_dims",
        }
    }
}

impl fmt::Display for LayoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        LayoutMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::Layout(format!("unknown layout mode `{s}`")))
    }
}

/// Channel allocation of one attention head between 3D RoPE and the view rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub total_dims: usize,
    pub t_band: Range<usize>,
    pub h_band: Range<usize>,
    pub w_band: Range<usize>,
    /// Channel ranges rotated by the view rotation; each length is a multiple of 3.
    pub viewrope_bands: Vec<Range<usize>>,
    pub mode: LayoutMode,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_rope_base() -> f64 {
    10_000.0
}

impl ChannelLayout {
    /// 128-channel head split 44/42/42 with 12 view-rotation channels per hosting band.
    pub fn new(mode: LayoutMode) -> Self {
        Self::compact(128, mode, 12).expect("default layout is valid")
    }

    /// Splits `total_dims` in the 44:42:42 ratio (even band lengths) and places
    /// `width` view-rotation channels at the low-frequency end of each hosting band.
    pub fn compact(total_dims: usize, mode: LayoutMode, width: usize) -> Result<Self> {
        let t_len = 2 * ((total_dims as f64 * 44.0 / 256.0).round() as usize);
        if t_len >= total_dims {
            return Err(Error::Layout(format!("{total_dims} channels are too few for three bands")));
        }
        let rest = total_dims - t_len;
        let h_len = 2 * (rest / 4);
        let t_band = 0..t_len;
        let h_band = t_len..t_len + h_len;
        let w_band = t_len + h_len..total_dims;
        let viewrope_bands = match mode {
            LayoutMode::TDimLowFreq => vec![t_band.end.saturating_sub(width)..t_band.end],
            LayoutMode::HwDimLowFreq | LayoutMode::HwDimReplace => vec![
                h_band.end.saturating_sub(width)..h_band.end,
                w_band.end.saturating_sub(width)..w_band.end,
            ],
            LayoutMode::AllDims => vec![0..total_dims - total_dims % 3],
        };
        if mode != LayoutMode::AllDims {
            let host = match mode {
                LayoutMode::TDimLowFreq => t_len,
                _ => h_len.min(total_dims - t_len - h_len),
            };
            if width > host {
                return Err(Error::Layout(format!("{width} channels do not fit a {host}-channel band")));
            }
        }
        let layout = Self {
            total_dims,
            t_band,
            h_band,
            w_band,
            viewrope_bands,
            mode,
            rope_base: default_rope_base(),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.total_dims;
        if d == 0 {
            return Err(Error::Layout("head dimension must be positive".into()));
        }
        for (name, band) in [("t", &self.t_band), ("h", &self.h_band), ("w", &self.w_band)] {
            if band.start > band.end || band.end > d {
                return Err(Error::Layout(format!("{name} band {band:?} outside [0, {d})")));
            }
        }
        let mut bands: Vec<&Range<usize>> = self.viewrope_bands.iter().collect();
        if bands.is_empty() {
            return Err(Error::Layout("no view-rotation band".into()));
        }
        for band in &bands {
            if band.is_empty() || band.end > d {
                return Err(Error::Layout(format!("view-rotation band {band:?} outside [0, {d})")));
            }
            if band.len() % 3 != 0 {
                return Err(Error::Layout(format!(
                    "view-rotation band {band:?} has {} channels, not a multiple of 3",
                    band.len()
                )));
            }
        }
        bands.sort_by_key(|b| b.start);
        if bands.windows(2).any(|w| w[0].end > w[1].start) {
            return Err(Error::Layout("view-rotation bands overlap".into()));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return Err(Error::Layout(format!("rope base {} must exceed 1", self.rope_base)));
        }
        Ok(())
    }

    /// First channel of every rotated 3-subvector, consecutive triples within each band.
    pub fn subvector_starts(&self) -> Vec<usize> {
        self.viewrope_bands
            .iter()
            .flat_map(|b| b.clone().step_by(3))
            .collect()
    }

    pub fn in_viewrope_band(&self, channel: usize) -> bool {
        self.viewrope_bands.iter().any(|b| b.contains(&channel))
    }
}

impl Default for ChannelLayout {
    fn default() -> Self {
        Self::new(LayoutMode::TDimLowFreq)
    }
}
