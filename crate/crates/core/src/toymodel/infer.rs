use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::flow::{image_tokens, tokens_image, velocity_from_clean};
use super::model::{mix_seed, AttentionPlan, LayerKV, SelectionRule};
use super::scene::{frame_geometry, FrameGeometry};
use super::train::frame_input;
use super::ToyModel;
use crate::attention::BlockMask;
use crate::geometry::{CameraPose, RayField};
use crate::tensor::TokenTensor;
use crate::trajgen::TrajectoryRecord;
use crate::warp::Image;
use crate::{Error, Result};

/// Keys and values of committed clean frames, per layer, with their geometry.
/// Append-only.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanKVCache {
    layers: Vec<LayerKV>,
    poses: Vec<CameraPose>,
    fields: Vec<RayField>,
}

impl CleanKVCache {
    pub fn new(layers: usize, heads: usize, dim: usize) -> Self {
        let empty = LayerKV {
            keys: TokenTensor::zeros(0, heads, dim),
            values: TokenTensor::zeros(0, heads, dim),
        };
        Self {
            layers: vec![empty; layers],
            poses: Vec::new(),
            fields: Vec::new(),
        }
    }

    /// Committed frames.
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn layers(&self) -> &[LayerKV] {
        &self.layers
    }

    pub fn poses(&self) -> &[CameraPose] {
        &self.poses
    }

    pub fn fields(&self) -> &[RayField] {
        &self.fields
    }

    /// Key blocks held per layer.
    pub fn blocks(&self, block_size: usize) -> usize {
        self.layers.first().map_or(0, |l| l.keys.len() / block_size)
    }

    pub fn append(&mut self, kv: Vec<LayerKV>, pose: CameraPose, field: RayField) -> Result<()> {
        if kv.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} layers appended to a {}-layer cache",
                kv.len(),
                self.layers.len()
            )));
        }
        for (slot, new) in self.layers.iter_mut().zip(kv) {
            slot.keys = TokenTensor::concat(&[&slot.keys, &new.keys])?;
            slot.values = TokenTensor::concat(&[&slot.values, &new.values])?;
        }
        self.poses.push(pose);
        self.fields.push(field);
        Ok(())
    }
}

/// Rollout settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferOptions {
    pub rule: SelectionRule,
    pub seed: u64,
    /// Keep every denoising input and prediction.
    pub record_trace: bool,
}

impl InferOptions {
    pub fn new(rule: SelectionRule, seed: u64) -> Self {
        Self {
            rule,
            seed,
            record_trace: false,
        }
    }
}

/// One denoising step of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseStep {
    pub t: f64,
    pub input: Image,
    pub velocity: Image,
    /// Block mask of every layer.
    pub masks: Vec<BlockMask>,
}

/// Generated frames and the final cache.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub frames: Vec<Image>,
    pub cache: CleanKVCache,
    /// `trace[i]` holds the steps of frame `i` (empty for the given first frame).
    pub trace: Vec<Vec<DenoiseStep>>,
}

/// Streaming generation along `traj` from a given first latent frame.
pub fn streaming_infer(
    model: &ToyModel,
    first: &Image,
    traj: &[TrajectoryRecord],
    options: &InferOptions,
) -> Result<Rollout> {
    let geo = frame_geometry(traj, &model.config)?;
    streaming_infer_geometry(model, first, &geo, options)
}

/// Same as [`streaming_infer`] with precomputed poses and ray fields.
pub fn streaming_infer_geometry(
    model: &ToyModel,
    first: &Image,
    geometry: &FrameGeometry,
    options: &InferOptions,
) -> Result<Rollout> {
    let cfg = &model.config;
    let frames = geometry.poses.len();
    if frames == 0 {
        return Err(Error::Parameter("empty trajectory".into()));
    }
    if geometry.fields.len() != frames {
        return Err(Error::Dimension(format!(
            "{frames} poses but {} ray fields",
            geometry.fields.len()
        )));
    }
    let grid = cfg.grid;
    if first.shape() != (grid.rows, grid.cols, cfg.channels) {
        return Err(Error::Dimension(format!(
            "first frame is {:?}, model expects {}x{}x{}",
            first.shape(),
            grid.rows,
            grid.cols,
            cfg.channels
        )));
    }
    let flags = cfg.stage.encoding();
    let steps = cfg.denoise_steps;
    let dt = 1.0 / steps as f64;
    let mut cache = CleanKVCache::new(cfg.layers, cfg.heads, cfg.head_dim);
    let mut out_frames = Vec::with_capacity(frames);
    let mut trace = Vec::with_capacity(frames);

    for i in 0..frames {
        let field = &geometry.fields[i];
        let frame_seed = mix_seed(options.seed, i as u64);
        let allowed = BlockMask::full(1, i + 1);
        let latent = if i == 0 {
            trace.push(Vec::new());
            image_tokens(first)
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
            let mut z = DMatrix::from_fn(grid.len(), cfg.channels, |_, _| {
                let n: f64 = StandardNormal.sample(&mut rng);
                n
            });
            let mut steps_trace = Vec::new();
            for s in 0..steps {
                let t = 1.0 - s as f64 * dt;
                let plan = AttentionPlan {
                    allowed: allowed.clone(),
                    rule: options.rule,
                    flags,
                    seed: mix_seed(frame_seed, s as u64 + 1),
                };
                let input = frame_input(&z, t, i, field);
                let out = model.forward(&input, Some(cache.layers()), &plan, false)?;
                let v = velocity_from_clean(&z, &out.x0, t);
                if options.record_trace {
                    steps_trace.push(DenoiseStep {
                        t,
                        input: tokens_image(&z, grid.rows, grid.cols)?,
                        velocity: tokens_image(&v, grid.rows, grid.cols)?,
                        masks: out.masks,
                    });
                }
                z -= v * dt;
            }
            trace.push(steps_trace);
            z
        };
        // Commit the clean frame.
        let plan = AttentionPlan {
            allowed,
            rule: options.rule,
            flags,
            seed: mix_seed(frame_seed, 0),
        };
        let out = model.forward(&frame_input(&latent, 0.0, i, field), Some(cache.layers()), &plan, false)?;
        cache.append(out.kv, geometry.poses[i].clone(), field.clone())?;
        out_frames.push(tokens_image(&latent, grid.rows, grid.cols)?);
    }
    Ok(Rollout {
        frames: out_frames,
        cache,
        trace,
    })
}
