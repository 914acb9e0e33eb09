use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::PatchGrid;
use crate::viewrope::{ChannelLayout, EncodingFlags, LayoutMode};
use crate::{Error, Result};

/// Progressive training stages, in the only order they may run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Short clips, dense attention, no view encoding.
    TeacherForcing,
    /// Adds the view encoding.
    PlusViewRope,
    /// Switches to block-sparse attention.
    PlusSparse,
    /// Longer clips.
    LongContext,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Self::TeacherForcing, Self::PlusViewRope, Self::PlusSparse, Self::LongContext];

    pub fn viewrope(self) -> bool {
        self >= Self::PlusViewRope
    }

    pub fn sparse(self) -> bool {
        self >= Self::PlusSparse
    }

    pub fn encoding(self) -> EncodingFlags {
        EncodingFlags {
            rope: true,
            viewrope: self.viewrope(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TeacherForcing => "teacher_forcing",
            Self::PlusViewRope => "plus_viewrope",
            Self::PlusSparse => "plus_sparse",
            Self::LongContext => "long_context",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == norm)
            .or(match norm.as_str() {
                "i" | "1" => Some(Self::TeacherForcing),
                "ii" | "2" => Some(Self::PlusViewRope),
                "iii" | "3" => Some(Self::PlusSparse),
                "iv" | "4" => Some(Self::LongContext),
                _ => None,
            })
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

/// Architecture and sampling settings of the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp_hidden: usize,
    /// Latent channels per patch.
    pub channels: usize,
    pub grid: PatchGrid,
    pub patch_size: usize,
    pub fov_h_deg: f64,
    pub clip_frames: usize,
    pub denoise_steps: usize,
    pub topk: usize,
    pub sample_count: usize,
    pub layout: ChannelLayout,
    pub stage: Stage,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            head_dim: 32,
            mlp_hidden: 96,
            channels: 4,
            grid: PatchGrid { rows: 4, cols: 4 },
            patch_size: 8,
            fov_h_deg: 60.0,
            clip_frames: 8,
            denoise_steps: 4,
            topk: 3,
            sample_count: 10,
            layout: ChannelLayout::compact(32, LayoutMode::TDimLowFreq, 6).expect("valid default layout"),
            stage: Stage::LongContext,
        }
    }
}

impl ToyConfig {
    /// Tokens per frame.
    pub fn block_size(&self) -> usize {
        self.grid.rows * self.grid.cols
    }

    pub fn model_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Per-token input features: latent channels plus three noise-level features.
    pub fn input_dim(&self) -> usize {
        self.channels + 3
    }

    pub fn image_size(&self) -> (u32, u32) {
        ((self.grid.cols * self.patch_size) as u32, (self.grid.rows * self.patch_size) as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("mlp_hidden", self.mlp_hidden),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("denoise_steps", self.denoise_steps),
            ("sample_count", self.sample_count),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("patch grid must be non-empty".into()));
        }
        if self.layout.total_dims != self.head_dim {
            return Err(Error::Config(format!(
                "layout covers {} channels but head_dim is {}",
                self.layout.total_dims, self.head_dim
            )));
        }
        self.layout.validate()?;
        if self.sample_count > self.block_size() {
            return Err(Error::Config(format!(
                "sample_count {} exceeds the block size {}",
                self.sample_count,
                self.block_size()
            )));
        }
        if self.clip_frames < 2 {
            return Err(Error::Config("training clips need at least 2 frames".into()));
        }
        if !(self.fov_h_deg > 0.0 && self.fov_h_deg < 180.0) {
            return Err(Error::Config(format!("fov {} outside (0, 180)", self.fov_h_deg)));
        }
        Ok(())
    }
}
