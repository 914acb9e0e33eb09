use std::path::{Path, PathBuf};

use serde::Serialize;
use viewrope::trajgen::read_trajectory;
use viewrope::warp::{loop_closure_loss, DepthMap, FloatGrid, Image, LoopClosureParams, LoopClosureReport};

use crate::config::EvalLcConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_json, Output};

const EXTENSIONS: [&str; 3] = ["vrkd", "bin", "csv"];

/// `<dir>/<prefix>_NNNN.<ext>` for the first extension that exists.
pub fn find_grid(dir: &Path, prefix: &str, index: usize) -> Option<PathBuf> {
    EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{prefix}_{index:04}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    frames: usize,
    missing_depths: Vec<usize>,
    report: &'a LoopClosureReport,
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("eval-lc needs --{name}")))
}

pub fn run(c: &EvalLcConfig, out: &Output) -> CliResult<()> {
    let traj_path = required(&c.trajectory, "traj")?;
    let frames_dir = required(&c.frames_dir, "frames")?;
    let eps = *required(&c.eps, "eps")?;
    let traj = read_trajectory(traj_path)?;

    let mut frames = Vec::with_capacity(traj.len());
    let mut poses = Vec::with_capacity(traj.len());
    let mut depths = Vec::with_capacity(traj.len());
    let mut missing = Vec::new();
    for (i, rec) in traj.iter().enumerate() {
        let path = find_grid(frames_dir, "frame", i).ok_or_else(|| {
            CliError::Config(format!("no frame_{i:04}.{{vrkd,bin,csv}} in {}", frames_dir.display()))
        })?;
        let grid = FloatGrid::load(&path)?;
        let pose = rec.camera_pose(grid.width as u32, grid.height as u32)?;
        let depth = match c.depths_dir.as_deref().and_then(|d| find_grid(d, "depth", i)) {
            Some(p) => Some(DepthMap::from_grid(&FloatGrid::load(&p)?, pose.clone())?),
            None => {
                missing.push(i);
                None
            }
        };
        frames.push(Image::from_grid(&grid));
        poses.push(pose);
        depths.push(depth);
    }
    let params = LoopClosureParams {
        eps,
        translation_weight: c.lambda,
        huber_delta: c.huber_delta,
        occlusion_tolerance: c.occlusion_tolerance,
    };
    let report = loop_closure_loss(&frames, &poses, &depths, &params)?;
    for (t, k) in &report.skipped {
        out.note(format!("warning: skipped pair ({t}, {k}): no depth for frame {t}"));
    }
    if let Some(path) = &c.output {
        write_json(path, &report)?;
    }
    let text = format!(
        "loop-closure loss {}\nrevisiting pairs evaluated: {}\nskipped pairs: {}",
        report.total,
        report.pairs.len(),
        report.skipped.len()
    );
    out.emit(
        text,
        &Summary {
            frames: frames.len(),
            missing_depths: missing,
            report: &report,
        },
    );
    Ok(())
}
