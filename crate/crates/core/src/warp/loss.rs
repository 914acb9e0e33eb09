use serde::{Deserialize, Serialize};

use super::{warp_view_with_tolerance, DepthMap, Image, DEFAULT_OCCLUSION_TOLERANCE};
use crate::geometry::{revisit, CameraPose, DEFAULT_TRANSLATION_WEIGHT};
use crate::{Error, Result};

/// Huber threshold of the loop-closure residual penalty.
pub const DEFAULT_HUBER_DELTA: f64 = 0.1;

/// Quadratic below `delta`, linear above.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopClosureParams {
    /// Revisit threshold on the pose similarity.
    pub eps: f64,
    pub translation_weight: f64,
    pub huber_delta: f64,
    pub occlusion_tolerance: f64,
}

impl LoopClosureParams {
    /// Default λ, Huber δ and occlusion tolerance with the given revisit threshold.
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            translation_weight: DEFAULT_TRANSLATION_WEIGHT,
            huber_delta: DEFAULT_HUBER_DELTA,
            occlusion_tolerance: DEFAULT_OCCLUSION_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLoss {
    pub t: usize,
    pub k: usize,
    pub loss: f64,
    pub covisible: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopClosureReport {
    pub total: f64,
    /// Every revisiting pair that was evaluated.
    pub pairs: Vec<PairLoss>,
    /// Revisiting pairs `(t, k)` skipped because frame `t` had no depth.
    pub skipped: Vec<(usize, usize)>,
}

/// Robust photometric consistency over all revisiting frame pairs `k < t`:
/// frame `t` is warped into view `k` with its own depth and compared against
/// bilinear samples of frame `k` on the co-visible region.
pub fn loop_closure_loss(
    frames: &[Image],
    poses: &[CameraPose],
    depths: &[Option<DepthMap>],
    params: &LoopClosureParams,
) -> Result<LoopClosureReport> {
    if frames.len() != poses.len() || frames.len() != depths.len() {
        return Err(Error::Dimension(format!(
            "{} frames, {} poses, {} depth maps",
            frames.len(),
            poses.len(),
            depths.len()
        )));
    }
    if let Some(f) = frames.iter().find(|f| f.shape() != frames[0].shape()) {
        return Err(Error::Dimension(format!("frame shape {:?} differs from {:?}", f.shape(), frames[0].shape())));
    }
    let mut report = LoopClosureReport::default();
    for t in 0..frames.len() {
        for k in 0..t {
            if !revisit(&poses[t], &poses[k], params.eps, params.translation_weight) {
                continue;
            }
            let Some(depth) = &depths[t] else {
                report.skipped.push((t, k));
                continue;
            };
            if (depth.height, depth.width) != (frames[t].height, frames[t].width) {
                return Err(Error::Dimension(format!("depth of frame {t} does not match the frame")));
            }
            let mut source = depth.clone();
            source.pose = poses[t].clone();
            let target_depth = depths[k].as_ref().map(|d| DepthMap {
                pose: poses[k].clone(),
                ..d.clone()
            });
            let warp = warp_view_with_tolerance(&source, &poses[k], target_depth.as_ref(), params.occlusion_tolerance)?;
            let (target, channels) = (&frames[k], frames[k].channels);
            let mut sample = vec![0.0; channels];
            let mut loss = 0.0;
            let mut hits = 0;
            for row in 0..warp.height {
                for col in 0..warp.width {
                    if !warp.is_covisible(row, col) {
                        continue;
                    }
                    let uv = warp.coord(row, col);
                    if target.sample_bilinear(uv.x, uv.y, &mut sample).is_none() {
                        continue;
                    }
                    hits += 1;
                    for (a, b) in frames[t].pixel(row, col).iter().zip(&sample) {
                        loss += huber(a - b, params.huber_delta);
                    }
                }
            }
            report.total += loss;
            report.pairs.push(PairLoss {
                t,
                k,
                loss,
                covisible: hits,
            });
        }
    }
    Ok(report)
}

/// Distance between two frames of equal shape.
pub trait FrameDistance {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64>;
}

impl<F: Fn(&Image, &Image) -> f64> FrameDistance for F {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        Ok(self(a, b))
    }
}

/// Mean Huber of per-pixel differences after normalising every channel by the
/// reference frame's mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustPhotometric {
    pub delta: f64,
}

impl Default for RobustPhotometric {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl FrameDistance for RobustPhotometric {
    fn distance(&self, reference: &Image, other: &Image) -> Result<f64> {
        check_shapes(reference, other)?;
        let c = reference.channels;
        let n = (reference.height * reference.width) as f64;
        let mut total = 0.0;
        for ch in 0..c {
            let values = || reference.data.iter().skip(ch).step_by(c);
            let mean = values().sum::<f64>() / n;
            let var = values().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
            for (a, b) in values().zip(other.data.iter().skip(ch).step_by(c)) {
                total += huber((a - b) * scale, self.delta);
            }
        }
        Ok(total / reference.data.len() as f64)
    }
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("frame shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Loop-closure error: distance between the start frame and the frame
/// generated on returning to the start pose.
pub fn lce(start: &Image, returned: &Image, distance: &dyn FrameDistance) -> Result<f64> {
    check_shapes(start, returned)?;
    distance.distance(start, returned)
}
