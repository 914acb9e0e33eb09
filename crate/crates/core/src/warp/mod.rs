//! Depth-based reprojection between posed views, the loop-closure consistency
//! loss, and the loop-closure error metric.
//!
//! Pixel coordinates index the sample grid directly: pixel `(row, col)` sits at
//! `(u, v) = (col, row)`, and bilinear sampling is defined on `[0, W−1] × [0, H−1]`.

mod grid;
mod loss;
mod project;

pub use grid::{DepthMap, FloatGrid, Image, GRID_MAGIC};
pub use loss::{
    huber, lce, loop_closure_loss, FrameDistance, LoopClosureParams, LoopClosureReport, PairLoss,
    RobustPhotometric, DEFAULT_HUBER_DELTA,
};
pub use project::{
    backproject, transform_point, warp_pixel, warp_view, warp_view_with_tolerance, WarpResult,
    DEFAULT_OCCLUSION_TOLERANCE,
};
