use nalgebra::{Rotation3, UnitQuaternion};

use super::{StartState, TrajectoryRecord};
use crate::geometry::{matrix_to_euler_ue5, EulerUE5};
use crate::{Error, Result};

/// Nearest angle to `reference` equivalent to `angle` modulo 360°.
fn unwrap_deg(angle: f64, reference: f64) -> f64 {
    angle + 360.0 * ((reference - angle) / 360.0).round()
}

fn interpolate(a: &TrajectoryRecord, b: &TrajectoryRecord, t: f64, frame: u64) -> TrajectoryRecord {
    let qa = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(a.rotation_ue()));
    let qb = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(b.rotation_ue()));
    let rot = qa.slerp(&qb, t).to_rotation_matrix().into_inner();
    let lerp = |x: f64, y: f64| x + t * (y - x);
    // Pick the Euler representative closest to a naive angle interpolation so
    // unwrapped sequences stay continuous.
    let guess = EulerUE5::new(
        lerp(a.euler.pitch, b.euler.pitch),
        lerp(a.euler.roll, b.euler.roll),
        lerp(a.euler.yaw, b.euler.yaw),
    );
    let d = matrix_to_euler_ue5(&rot).angles;
    let euler = EulerUE5::new(
        unwrap_deg(d.pitch, guess.pitch),
        unwrap_deg(d.roll, guess.roll),
        unwrap_deg(d.yaw, guess.yaw),
    );
    let state = StartState {
        fov_v: lerp(a.fov_v, b.fov_v),
        fov_h: lerp(a.fov_h, b.fov_h),
        ..a.state()
    };
    let pos = a.pos_cm + t * (b.pos_cm - a.pos_cm);
    let mut rec = TrajectoryRecord::new(frame, euler, pos, &state, a.wasd);
    // Keep the exact interpolated rotation rather than the Euler round trip.
    rec.c2w.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    rec
}

/// Uniformly resamples to `target` records. Source positions that land on
/// integer indices (including both endpoints) are copied exactly; the rest use
/// spherical rotation and linear position interpolation. The frame rate is
/// scaled so the duration is unchanged.
pub fn resample_fixed_endpoints(traj: &[TrajectoryRecord], target: usize) -> Result<Vec<TrajectoryRecord>> {
    if traj.len() < 2 || target < 2 {
        return Err(Error::Parameter(format!(
            "resampling needs at least 2 source and 2 target frames, got {} -> {target}",
            traj.len()
        )));
    }
    let n = traj.len() - 1;
    let m = target - 1;
    let fps = traj[0].fps.scaled(m as u64, n as u64)?;
    let first = traj[0].frame;
    Ok((0..=m)
        .map(|j| {
            let num = j * n;
            let (i, rem) = (num / m, num % m);
            let frame = first + j as u64;
            let mut rec = if rem == 0 {
                let mut r = traj[i].clone();
                r.frame = frame;
                r
            } else {
                interpolate(&traj[i], &traj[i + 1], rem as f64 / m as f64, frame)
            };
            rec.fps = fps;
            rec
        })
        .collect())
}
