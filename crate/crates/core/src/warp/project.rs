use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use super::DepthMap;
use crate::geometry::CameraPose;
use crate::{Error, Result};

/// Relative depth disagreement above which a target pixel counts as occluded.
pub const DEFAULT_OCCLUSION_TOLERANCE: f64 = 0.03;

/// Camera-frame point `K⁻¹[u, v, 1]ᵀ · depth`.
pub fn backproject(pose: &CameraPose, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(Error::InvalidDepth(format!("depth {depth} at ({u}, {v})")));
    }
    Ok(pose.intrinsics.unproject(u, v) * depth)
}

/// Maps a point from camera `source`'s frame into camera `target`'s frame.
///
/// With world-to-camera extrinsics `(R, P)` this is
/// `R_k R_t⁻¹ X + (P_k − R_k R_t⁻¹ P_t)`.
pub fn transform_point(x: &Vector3<f64>, source: &CameraPose, target: &CameraPose) -> Vector3<f64> {
    if source.rotation == target.rotation && source.position == target.position {
        return *x;
    }
    let (r_t, p_t) = source.extrinsic();
    let (r_k, p_k) = target.extrinsic();
    let rel = r_k * r_t.transpose();
    rel * x + (p_k - rel * p_t)
}

/// Target-image coordinates and target depth of one source pixel, or `None`
/// when the point lands behind the target camera.
pub fn warp_pixel(
    source: &CameraPose,
    target: &CameraPose,
    u: f64,
    v: f64,
    depth: f64,
) -> Result<Option<(Vector2<f64>, f64)>> {
    let x = backproject(source, u, v, depth)?;
    let y = transform_point(&x, source, target);
    Ok(target.intrinsics.project(&y).map(|(a, b)| (Vector2::new(a, b), y.z)))
}

/// Dense warp of a source depth map into a target view.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub height: usize,
    pub width: usize,
    /// Target pixel coordinates per source pixel; NaN where depth is invalid
    /// or the point is behind the target.
    pub coords: Vec<Vector2<f64>>,
    /// Target-frame depth per source pixel (NaN where undefined).
    pub target_depth: Vec<f64>,
    pub in_front: Vec<bool>,
    /// Co-visible pixels: in bounds, in front and, if checked, not occluded.
    pub covisible: Vec<bool>,
}

impl WarpResult {
    pub fn coord(&self, row: usize, col: usize) -> Vector2<f64> {
        self.coords[row * self.width + col]
    }

    pub fn is_covisible(&self, row: usize, col: usize) -> bool {
        self.covisible[row * self.width + col]
    }

    pub fn covisible_count(&self) -> usize {
        self.covisible.iter().filter(|&&b| b).count()
    }
}

/// Warps every valid source pixel into `target_pose`. When `target_depth` is
/// given, pixels whose depth disagrees by more than
/// [`DEFAULT_OCCLUSION_TOLERANCE`] (relative) are dropped from co-visibility.
pub fn warp_view(source: &DepthMap, target_pose: &CameraPose, target_depth: Option<&DepthMap>) -> Result<WarpResult> {
    warp_view_with_tolerance(source, target_pose, target_depth, DEFAULT_OCCLUSION_TOLERANCE)
}

pub fn warp_view_with_tolerance(
    source: &DepthMap,
    target_pose: &CameraPose,
    target_depth: Option<&DepthMap>,
    occlusion_tolerance: f64,
) -> Result<WarpResult> {
    let (h, w) = (source.height, source.width);
    let target_w = target_pose.intrinsics.width as f64;
    let target_h = target_pose.intrinsics.height as f64;
    if let Some(td) = target_depth {
        if td.width as f64 != target_w || td.height as f64 != target_h {
            return Err(Error::Dimension("target depth does not match target intrinsics".into()));
        }
    }
    let same_pose = source.pose == *target_pose;

    let per_pixel: Vec<(Vector2<f64>, f64, bool, bool)> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (row, col) = (i / w, i % w);
            let nan = (Vector2::new(f64::NAN, f64::NAN), f64::NAN, false, false);
            let Some(depth) = source.get(row, col) else {
                return nan;
            };
            let (uv, z) = if same_pose {
                (Vector2::new(col as f64, row as f64), depth)
            } else {
                match warp_pixel(&source.pose, target_pose, col as f64, row as f64, depth) {
                    Ok(Some(hit)) => hit,
                    _ => return nan,
                }
            };
            let inside = uv.x >= 0.0 && uv.y >= 0.0 && uv.x <= target_w - 1.0 && uv.y <= target_h - 1.0;
            let visible = inside
                && target_depth.is_none_or(|td| match td.nearest(uv.x, uv.y) {
                    Some(d) => ((z - d) / d).abs() <= occlusion_tolerance,
                    None => false,
                });
            (uv, z, true, visible)
        })
        .collect();

    Ok(WarpResult {
        height: h,
        width: w,
        coords: per_pixel.iter().map(|p| p.0).collect(),
        target_depth: per_pixel.iter().map(|p| p.1).collect(),
        in_front: per_pixel.iter().map(|p| p.2).collect(),
        covisible: per_pixel.iter().map(|p| p.3).collect(),
    })
}
