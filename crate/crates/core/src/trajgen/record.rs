use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{
    camera_to_ue_rotation, geodesic_angle, is_rotation, matrix_to_euler_ue5, ue_to_camera_rotation,
    ue_to_world_position, world_to_ue_position, CameraPose, EulerUE5, Intrinsics, ROTATION_TOLERANCE,
};
use crate::{Error, Result};

/// Allowed disagreement between the stored Euler angles and the c2w rotation.
pub const EULER_TOLERANCE_DEG: f64 = 1e-4;

/// Frame rate as a reduced fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 2]", try_from = "[u32; 2]")]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Parameter(format!("frame rate {num}/{den} must be positive")));
        }
        let g = num_integer::gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn integer(fps: u32) -> Self {
        Self::new(fps, 1).expect("positive frame rate")
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `self · mul / div`, reduced.
    pub fn scaled(self, mul: u64, div: u64) -> Result<Self> {
        let num = self.num as u64 * mul;
        let den = self.den as u64 * div;
        let g = num_integer::gcd(num, den).max(1);
        let (num, den) = (num / g, den / g);
        match (u32::try_from(num), u32::try_from(den)) {
            (Ok(n), Ok(d)) => Self::new(n, d),
            _ => Err(Error::Parameter(format!("frame rate {num}/{den} overflows"))),
        }
    }
}

impl Default for Fps {
    fn default() -> Self {
        Self::integer(30)
    }
}

impl From<Fps> for [u32; 2] {
    fn from(f: Fps) -> Self {
        [f.num, f.den]
    }
}

impl TryFrom<[u32; 2]> for Fps {
    type Error = Error;

    fn try_from(v: [u32; 2]) -> Result<Self> {
        let f = Self::new(v[0], v[1])?;
        if (f.num, f.den) != (v[0], v[1]) {
            return Err(Error::Parameter(format!("frame rate {}/{} is not reduced", v[0], v[1])));
        }
        Ok(f)
    }
}

/// One annotated frame in the UE5 frame (left-handed, X forward, Y right, Z up, cm).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub frame: u64,
    /// Camera-to-world transform: UE rotation and position in centimetres.
    pub c2w: Matrix4<f64>,
    pub euler: EulerUE5,
    pub pos_cm: Vector3<f64>,
    pub fov_v: f64,
    pub fov_h: f64,
    /// W, A, S, D key states.
    pub wasd: [bool; 4],
    pub fps: Fps,
}

impl TrajectoryRecord {
    pub fn new(frame: u64, euler: EulerUE5, pos_cm: Vector3<f64>, state: &StartState, wasd: [bool; 4]) -> Self {
        let mut c2w = Matrix4::identity();
        c2w.fixed_view_mut::<3, 3>(0, 0).copy_from(&euler.to_matrix());
        c2w.fixed_view_mut::<3, 1>(0, 3).copy_from(&pos_cm);
        Self {
            frame,
            c2w,
            euler,
            pos_cm,
            fov_v: state.fov_v,
            fov_h: state.fov_h,
            wasd,
            fps: state.fps,
        }
    }

    pub fn rotation_ue(&self) -> Matrix3<f64> {
        self.c2w.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Checks the structural invariants; the error names the offending field.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.c2w.iter().any(|x| !x.is_finite()) {
            return Err(("c2w", "non-finite entry".into()));
        }
        let last = self.c2w.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(("c2w", format!("last row is {last:?}, expected [0, 0, 0, 1]")));
        }
        let r = self.rotation_ue();
        if !is_rotation(&r, ROTATION_TOLERANCE) {
            return Err(("c2w", "upper-left 3x3 block is not a rotation".into()));
        }
        if self.c2w.fixed_view::<3, 1>(0, 3) != self.pos_cm {
            return Err(("pos_cm", "does not match the c2w translation column".into()));
        }
        let e = self.euler;
        if ![e.pitch, e.roll, e.yaw].iter().all(|x| x.is_finite()) {
            return Err(("euler", "non-finite angle".into()));
        }
        let gap = geodesic_angle(&e.to_matrix(), &r).to_degrees();
        if gap > EULER_TOLERANCE_DEG {
            return Err(("euler", format!("disagrees with c2w by {gap:e} degrees")));
        }
        for (name, fov) in [("fov_v", self.fov_v), ("fov_h", self.fov_h)] {
            if !(fov > 0.0 && fov < 180.0) {
                return Err((name, format!("{fov} outside (0, 180)")));
            }
        }
        Ok(())
    }

    /// Camera pose in the crate's right-handed metric world, with intrinsics
    /// derived from the stored fields of view.
    pub fn camera_pose(&self, width: u32, height: u32) -> Result<CameraPose> {
        let fx = 0.5 * width as f64 / (0.5 * self.fov_h.to_radians()).tan();
        let fy = 0.5 * height as f64 / (0.5 * self.fov_v.to_radians()).tan();
        let k = Intrinsics::new(fx, fy, 0.5 * width as f64, 0.5 * height as f64, width, height)?;
        CameraPose::new(
            ue_to_camera_rotation(&self.rotation_ue()),
            ue_to_world_position(&self.pos_cm),
            k,
        )
    }

    pub fn state(&self) -> StartState {
        StartState {
            euler: self.euler,
            pos_cm: self.pos_cm,
            fov_v: self.fov_v,
            fov_h: self.fov_h,
            fps: self.fps,
        }
    }
}

/// Initial camera state of a generated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub euler: EulerUE5,
    pub pos_cm: Vector3<f64>,
    pub fov_v: f64,
    pub fov_h: f64,
    pub fps: Fps,
}

impl Default for StartState {
    fn default() -> Self {
        Self {
            euler: EulerUE5::default(),
            pos_cm: Vector3::zeros(),
            fov_v: 2.0 * ((60f64.to_radians() / 2.0).tan() * 9.0 / 16.0).atan().to_degrees(),
            fov_h: 60.0,
            fps: Fps::default(),
        }
    }
}

impl StartState {
    pub fn from_pose(pose: &CameraPose, fps: Fps) -> Self {
        Self {
            euler: matrix_to_euler_ue5(&camera_to_ue_rotation(&pose.rotation)).angles,
            pos_cm: world_to_ue_position(&pose.position),
            fov_v: pose.intrinsics.fov_v_deg(),
            fov_h: pose.intrinsics.fov_h_deg(),
            fps,
        }
    }
}
