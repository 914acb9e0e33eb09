use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{StartState, TrajectoryRecord};
use crate::geometry::EulerUE5;
use crate::{Error, Result};

/// Rotation magnitudes used for the benchmark families, in degrees.
pub const STANDARD_LOOP_ANGLES: [f64; 4] = [30.0, 75.0, 90.0, 180.0];

/// Non-empty subset of {yaw, pitch, roll}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AxisSet {
    pub yaw: bool,
    pub pitch: bool,
    pub roll: bool,
}

impl AxisSet {
    pub const YAW: Self = Self { yaw: true, pitch: false, roll: false };
    pub const PITCH: Self = Self { yaw: false, pitch: true, roll: false };
    pub const ROLL: Self = Self { yaw: false, pitch: false, roll: true };

    /// All seven non-empty subsets.
    pub fn all_subsets() -> Vec<Self> {
        (1u8..8)
            .map(|m| Self {
                yaw: m & 1 != 0,
                pitch: m & 2 != 0,
                roll: m & 4 != 0,
            })
            .collect()
    }

    pub fn count(self) -> usize {
        usize::from(self.yaw) + usize::from(self.pitch) + usize::from(self.roll)
    }
}

impl fmt::Display for AxisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.yaw, "yaw"), (self.pitch, "pitch"), (self.roll, "roll")]
            .iter()
            .filter_map(|&(on, n)| on.then_some(n))
            .collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for AxisSet {
    type Err = Error;

    /// `yaw`, `pitch+roll`, `yaw,pitch,roll`, ...
    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self {
            yaw: false,
            pitch: false,
            roll: false,
        };
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "yaw" => set.yaw = true,
                "pitch" => set.pitch = true,
                "roll" => set.roll = true,
                other => return Err(Error::Config(format!("unknown rotation axis `{other}`"))),
            }
        }
        if set.count() == 0 {
            return Err(Error::Config("at least one rotation axis is required".into()));
        }
        Ok(set)
    }
}

/// Direction of the excursion on each axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPolicy {
    #[default]
    Positive,
    /// Independent random sign per axis, drawn from the seed.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopClosureSpec {
    /// Total excursion in degrees, shared equally between the chosen axes.
    pub angle_deg: f64,
    pub axes: AxisSet,
    pub frames: usize,
    #[serde(default)]
    pub sign: SignPolicy,
}

impl LoopClosureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 3 {
            return Err(Error::Parameter(format!("loop closure needs at least 3 frames, got {}", self.frames)));
        }
        if !(self.angle_deg >= 0.0 && self.angle_deg.is_finite()) {
            return Err(Error::Parameter(format!("loop angle {} must be finite and non-negative", self.angle_deg)));
        }
        if self.axes.count() == 0 {
            return Err(Error::Parameter("at least one rotation axis is required".into()));
        }
        Ok(())
    }
}

/// Stationary rotate-away/rotate-back trajectory. The Euler offset grows at a
/// constant rate to the full excursion at the middle frame and returns to zero
/// at the last frame, so the last record reproduces the first exactly.
pub fn gen_loop_closure(spec: &LoopClosureSpec, start: &StartState, seed: u64) -> Result<Vec<TrajectoryRecord>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let share = spec.angle_deg / spec.axes.count() as f64;
    let mut signed = |on: bool| {
        if !on {
            return 0.0;
        }
        match spec.sign {
            SignPolicy::Positive => share,
            SignPolicy::Random => {
                if rng.random_bool(0.5) {
                    share
                } else {
                    -share
                }
            }
        }
    };
    let offset = EulerUE5::new(signed(spec.axes.pitch), signed(spec.axes.roll), signed(spec.axes.yaw));

    let last = (spec.frames - 1) as i64;
    Ok((0..spec.frames)
        .map(|i| {
            let f = 1.0 - (2 * i as i64 - last).abs() as f64 / last as f64;
            let e = EulerUE5::new(
                start.euler.pitch + f * offset.pitch,
                start.euler.roll + f * offset.roll,
                start.euler.yaw + f * offset.yaw,
            );
            TrajectoryRecord::new(i as u64, e, start.pos_cm, start, [false; 4])
        })
        .collect())
}
