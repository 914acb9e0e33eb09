use nalgebra::Vector3;
use serde::Serialize;
use viewrope::geometry::EulerUE5;
use viewrope::trajgen::{
    gen_loop_closure, resample_fixed_endpoints, sample_action_trajectory, write_trajectory, Fps, LoopClosureSpec,
    StartState,
};

use crate::config::{GenTrajConfig, TrajKind};
use crate::error::CliResult;
use crate::output::{write_file, Output};

#[derive(Debug, Serialize)]
struct Summary {
    kind: TrajKind,
    records: usize,
    output: Option<String>,
    segments: Option<usize>,
}

pub fn run(c: &GenTrajConfig, out: &Output) -> CliResult<()> {
    let fov_v = 2.0 * ((c.fov_h_deg.to_radians() / 2.0).tan() * 9.0 / 16.0).atan().to_degrees();
    let start = StartState {
        euler: EulerUE5::new(c.start_pitch_deg, c.start_roll_deg, c.start_yaw_deg),
        pos_cm: Vector3::from(c.start_pos_cm),
        fov_v,
        fov_h: c.fov_h_deg,
        fps: Fps::integer(c.fps),
    };
    let (mut traj, segments) = match c.kind {
        TrajKind::Loop => {
            let spec = LoopClosureSpec {
                angle_deg: c.angle_deg,
                axes: c.axes,
                frames: c.frames,
                sign: c.sign,
            };
            (gen_loop_closure(&spec, &start, c.seed)?, None)
        }
        TrajKind::Action => {
            let (segs, traj) = sample_action_trajectory(&c.sampler, c.frames, &start, c.seed)?;
            (traj, Some(segs.len()))
        }
    };
    if let Some(n) = c.resample {
        traj = resample_fixed_endpoints(&traj, n)?;
    }
    let mut buf = Vec::new();
    write_trajectory(&traj, &mut buf)?;
    match &c.output {
        Some(path) => write_file(path, &buf)?,
        None if !out.is_json() => {
            print!("{}", String::from_utf8_lossy(&buf));
            return Ok(());
        }
        None => {}
    }
    let summary = Summary {
        kind: c.kind,
        records: traj.len(),
        output: c.output.as_ref().map(|p| p.display().to_string()),
        segments,
    };
    let text = match &c.output {
        Some(p) => format!("wrote {} records to {}", traj.len(), p.display()),
        None => format!("generated {} records", traj.len()),
    };
    out.emit(text, &summary);
    Ok(())
}
