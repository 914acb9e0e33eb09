use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{StartState, TrajectoryRecord};
use crate::geometry::EulerUE5;
use crate::{Error, Result};

pub const DEFAULT_ROLL_PROBABILITY: f64 = 0.2;
pub const DEFAULT_EXPLORATION_RADIUS_CM: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    RotateOnly,
    MoveOnly,
    MoveAndRotate,
    /// Circle a vertical axis in front of the camera while facing it.
    Orbit,
}

impl ActionKind {
    pub const ALL: [ActionKind; 4] = [Self::RotateOnly, Self::MoveOnly, Self::MoveAndRotate, Self::Orbit];
}

/// One piece of a composed camera path. Rates are per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionSegment {
    pub kind: ActionKind,
    pub frames: usize,
    #[serde(default)]
    pub yaw_rate_deg: f64,
    #[serde(default)]
    pub pitch_rate_deg: f64,
    /// Local velocity (forward, right, up) in cm per frame.
    #[serde(default)]
    pub velocity_cm: [f64; 3],
    #[serde(default)]
    pub orbit_radius_cm: f64,
    #[serde(default)]
    pub roll_enabled: bool,
    /// Roll magnitude per frame; the direction is drawn from the seed.
    #[serde(default)]
    pub roll_rate_deg: f64,
}

impl ActionSegment {
    fn base(kind: ActionKind, frames: usize) -> Self {
        Self {
            kind,
            frames,
            yaw_rate_deg: 0.0,
            pitch_rate_deg: 0.0,
            velocity_cm: [0.0; 3],
            orbit_radius_cm: 0.0,
            roll_enabled: false,
            roll_rate_deg: 0.0,
        }
    }

    pub fn rotate(frames: usize, yaw_rate_deg: f64, pitch_rate_deg: f64) -> Self {
        Self {
            yaw_rate_deg,
            pitch_rate_deg,
            ..Self::base(ActionKind::RotateOnly, frames)
        }
    }

    pub fn translate(frames: usize, velocity_cm: [f64; 3]) -> Self {
        Self {
            velocity_cm,
            ..Self::base(ActionKind::MoveOnly, frames)
        }
    }

    pub fn move_and_rotate(frames: usize, velocity_cm: [f64; 3], yaw_rate_deg: f64, pitch_rate_deg: f64) -> Self {
        Self {
            velocity_cm,
            yaw_rate_deg,
            pitch_rate_deg,
            ..Self::base(ActionKind::MoveAndRotate, frames)
        }
    }

    pub fn orbit(frames: usize, radius_cm: f64, yaw_rate_deg: f64) -> Self {
        Self {
            orbit_radius_cm: radius_cm,
            yaw_rate_deg,
            ..Self::base(ActionKind::Orbit, frames)
        }
    }

    pub fn with_roll(self, roll_rate_deg: f64) -> Self {
        Self {
            roll_enabled: true,
            roll_rate_deg,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Parameter("segment duration must be at least one frame".into()));
        }
        if self.kind == ActionKind::Orbit && !(self.orbit_radius_cm > 0.0) {
            return Err(Error::Parameter(format!("orbit radius {} must be positive", self.orbit_radius_cm)));
        }
        let all = [self.yaw_rate_deg, self.pitch_rate_deg, self.orbit_radius_cm, self.roll_rate_deg];
        if all.iter().chain(&self.velocity_cm).any(|x| !x.is_finite()) {
            return Err(Error::Parameter("segment parameters must be finite".into()));
        }
        Ok(())
    }
}

fn forward_horizontal(yaw_deg: f64) -> Vector3<f64> {
    let y = yaw_deg.to_radians();
    Vector3::new(y.cos(), y.sin(), 0.0)
}

/// Key of the dominant horizontal motion in the previous camera's frame.
fn wasd_for(prev: &TrajectoryRecord, pos: &Vector3<f64>) -> [bool; 4] {
    let local = prev.rotation_ue().transpose() * (pos - prev.pos_cm);
    let (fwd, right) = (local.x, local.y);
    if fwd.abs().max(right.abs()) < 1e-9 {
        return [false; 4];
    }
    if fwd.abs() >= right.abs() {
        [fwd > 0.0, false, fwd < 0.0, false]
    } else {
        [false, right < 0.0, false, right > 0.0]
    }
}

/// Composes segments continuously from `start`. The first record is the start
/// state; each segment appends `frames` records.
pub fn gen_action_sequence(
    segments: &[ActionSegment],
    start: &StartState,
    seed: u64,
) -> Result<Vec<TrajectoryRecord>> {
    if segments.is_empty() {
        return Err(Error::Parameter("at least one action segment is required".into()));
    }
    for s in segments {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = vec![TrajectoryRecord::new(0, start.euler, start.pos_cm, start, [false; 4])];
    for seg in segments {
        let roll = if seg.roll_enabled {
            if rng.random_bool(0.5) {
                seg.roll_rate_deg
            } else {
                -seg.roll_rate_deg
            }
        } else {
            0.0
        };
        let origin = records.last().unwrap().clone();
        let center = origin.pos_cm + seg.orbit_radius_cm * forward_horizontal(origin.euler.yaw);
        for step in 1..=seg.frames {
            let prev = records.last().unwrap();
            let n = step as f64;
            let (yaw_rate, pitch_rate) = match seg.kind {
                ActionKind::MoveOnly => (0.0, 0.0),
                ActionKind::Orbit => (seg.yaw_rate_deg, 0.0),
                _ => (seg.yaw_rate_deg, seg.pitch_rate_deg),
            };
            let euler = if yaw_rate == 0.0 && pitch_rate == 0.0 && roll == 0.0 {
                origin.euler
            } else {
                EulerUE5::new(
                    origin.euler.pitch + n * pitch_rate,
                    origin.euler.roll + n * roll,
                    origin.euler.yaw + n * yaw_rate,
                )
            };
            let pos = match seg.kind {
                ActionKind::RotateOnly => origin.pos_cm,
                ActionKind::MoveOnly | ActionKind::MoveAndRotate => {
                    prev.pos_cm + euler.to_matrix() * Vector3::from(seg.velocity_cm)
                }
                ActionKind::Orbit => {
                    let mut p = center - seg.orbit_radius_cm * forward_horizontal(euler.yaw);
                    p.z = origin.pos_cm.z;
                    p
                }
            };
            let wasd = wasd_for(prev, &pos);
            let rec = TrajectoryRecord::new(prev.frame + 1, euler, pos, start, wasd);
            records.push(rec);
        }
    }
    Ok(records)
}

/// Parameters of the random segment sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionSamplerConfig {
    pub min_segment_frames: usize,
    pub max_segment_frames: usize,
    pub max_yaw_rate_deg: f64,
    pub max_pitch_rate_deg: f64,
    pub max_speed_cm: f64,
    pub min_orbit_radius_cm: f64,
    pub max_orbit_radius_cm: f64,
    pub max_roll_rate_deg: f64,
    /// Roll probability per kind, in [`ActionKind::ALL`] order.
    pub roll_probability: [f64; 4],
    /// Positions stay within this distance of the start.
    pub exploration_radius_cm: f64,
}

impl Default for ActionSamplerConfig {
    fn default() -> Self {
        Self {
            min_segment_frames: 8,
            max_segment_frames: 24,
            max_yaw_rate_deg: 3.0,
            max_pitch_rate_deg: 1.0,
            max_speed_cm: 10.0,
            min_orbit_radius_cm: 100.0,
            max_orbit_radius_cm: 300.0,
            max_roll_rate_deg: 1.0,
            roll_probability: [DEFAULT_ROLL_PROBABILITY; 4],
            exploration_radius_cm: DEFAULT_EXPLORATION_RADIUS_CM,
        }
    }
}

impl ActionSamplerConfig {
    fn sample(&self, rng: &mut ChaCha8Rng) -> ActionSegment {
        let kind_idx = rng.random_range(0..4);
        let kind = ActionKind::ALL[kind_idx];
        let frames = rng.random_range(self.min_segment_frames..=self.max_segment_frames);
        let yaw = rng.random_range(-self.max_yaw_rate_deg..=self.max_yaw_rate_deg);
        let pitch = rng.random_range(-self.max_pitch_rate_deg..=self.max_pitch_rate_deg);
        let heading = rng.random_range(0.0..std::f64::consts::TAU);
        let speed = rng.random_range(0.0..=self.max_speed_cm);
        let velocity = [speed * heading.cos(), speed * heading.sin(), 0.0];
        let mut seg = match kind {
            ActionKind::RotateOnly => ActionSegment::rotate(frames, yaw, pitch),
            ActionKind::MoveOnly => ActionSegment::translate(frames, velocity),
            ActionKind::MoveAndRotate => ActionSegment::move_and_rotate(frames, velocity, yaw, pitch),
            ActionKind::Orbit => {
                let r = rng.random_range(self.min_orbit_radius_cm..=self.max_orbit_radius_cm);
                ActionSegment::orbit(frames, r, yaw)
            }
        };
        if rng.random_bool(self.roll_probability[kind_idx].clamp(0.0, 1.0)) {
            seg = seg.with_roll(rng.random_range(0.0..=self.max_roll_rate_deg));
        }
        seg
    }

    fn validate(&self) -> Result<()> {
        if self.min_segment_frames == 0 || self.min_segment_frames > self.max_segment_frames {
            return Err(Error::Config("segment frame range must be non-empty and positive".into()));
        }
        if !(self.min_orbit_radius_cm > 0.0 && self.min_orbit_radius_cm <= self.max_orbit_radius_cm) {
            return Err(Error::Config("orbit radius range must be positive and ordered".into()));
        }
        if !(self.exploration_radius_cm > 0.0) {
            return Err(Error::Config("exploration radius must be positive".into()));
        }
        Ok(())
    }
}

/// Draws random segments until `total_frames` records exist. Segments that
/// would leave the exploration radius are redrawn; after repeated failures a
/// rotation-only segment is used instead.
pub fn sample_action_trajectory(
    config: &ActionSamplerConfig,
    total_frames: usize,
    start: &StartState,
    seed: u64,
) -> Result<(Vec<ActionSegment>, Vec<TrajectoryRecord>)> {
    config.validate()?;
    if total_frames < 2 {
        return Err(Error::Parameter("a sampled trajectory needs at least 2 frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut records = vec![TrajectoryRecord::new(0, start.euler, start.pos_cm, start, [false; 4])];
    while records.len() < total_frames {
        let here = records.last().unwrap().state();
        let mut chosen = None;
        for _ in 0..16 {
            let seg = config.sample(&mut rng);
            let part = gen_action_sequence(&[seg], &here, rng.random())?;
            if part.iter().all(|r| (r.pos_cm - start.pos_cm).norm() <= config.exploration_radius_cm) {
                chosen = Some((seg, part));
                break;
            }
        }
        let (seg, part) = match chosen {
            Some(c) => c,
            None => {
                let seg = ActionSegment::rotate(config.min_segment_frames, config.max_yaw_rate_deg, 0.0);
                let part = gen_action_sequence(&[seg], &here, 0)?;
                (seg, part)
            }
        };
        let offset = records.last().unwrap().frame;
        for mut r in part.into_iter().skip(1) {
            r.frame += offset;
            records.push(r);
        }
        segments.push(seg);
    }
    records.truncate(total_frames);
    Ok((segments, records))
}
