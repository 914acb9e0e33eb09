//! Unreal-style Euler angles and conversions between the UE5 frame
//! (left-handed, X forward, Y right, Z up, centimetres) and the crate's
//! right-handed world frame.
//!
//! The right-handed world is the UE world with its Y axis negated and lengths
//! in metres. Camera axes map as: camera z (forward) → UE local X, camera x
//! (right) → UE local Y, camera y (down) → −UE local Z.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{rot_x, rot_y, rot_z};

/// Euler angles in degrees, composed as `R = R_z(yaw)·R_y(pitch)·R_x(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerUE5 {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl EulerUE5 {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        Self { pitch, roll, yaw }
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        euler_ue5_to_matrix(self)
    }
}

/// Result of decomposing a rotation matrix into UE5 Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerUE5,
    /// `|pitch| = 90°`: yaw and roll are not separable, roll is reported as 0.
    pub gimbal_lock: bool,
}

pub fn euler_ue5_to_matrix(e: &EulerUE5) -> Matrix3<f64> {
    rot_z(e.yaw.to_radians()) * rot_y(e.pitch.to_radians()) * rot_x(e.roll.to_radians())
}

pub fn matrix_to_euler_ue5(r: &Matrix3<f64>) -> EulerDecomposition {
    const LOCK: f64 = 1e-12;
    let sp = (-r[(2, 0)]).clamp(-1.0, 1.0);
    let cp = r[(0, 0)].hypot(r[(1, 0)]);
    let pitch = sp.atan2(cp);
    if cp <= LOCK {
        // R = R_z(yaw ∓ roll)·R_y(±90°); fold everything into yaw.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return EulerDecomposition {
            angles: EulerUE5::new(pitch.to_degrees(), 0.0, yaw.to_degrees()),
            gimbal_lock: true,
        };
    }
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    EulerDecomposition {
        angles: EulerUE5::new(pitch.to_degrees(), roll.to_degrees(), yaw.to_degrees()),
        gimbal_lock: false,
    }
}

fn flip_y() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0))
}

/// Maps camera-frame coordinates (x right, y down, z forward) to UE local (X fwd, Y right, Z up).
fn camera_to_ue_local() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

/// UE c2w rotation → world-from-camera rotation of a [`CameraPose`](super::CameraPose).
pub fn ue_to_camera_rotation(r_ue: &Matrix3<f64>) -> Matrix3<f64> {
    flip_y() * r_ue * camera_to_ue_local()
}

/// Inverse of [`ue_to_camera_rotation`].
pub fn camera_to_ue_rotation(r_cam: &Matrix3<f64>) -> Matrix3<f64> {
    flip_y() * r_cam * camera_to_ue_local().transpose()
}

/// UE position (cm) → world position (m).
pub fn ue_to_world_position(pos_cm: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(pos_cm.x, -pos_cm.y, pos_cm.z) / 100.0
}

/// World position (m) → UE position (cm).
pub fn world_to_ue_position(pos_m: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(pos_m.x, -pos_m.y, pos_m.z) * 100.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::is_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wrap(d: f64) -> f64 {
        (d + 180.0).rem_euclid(360.0) - 180.0
    }

    #[test]
    fn identity_and_single_axis() {
        assert_eq!(euler_ue5_to_matrix(&EulerUE5::default()), Matrix3::identity());
        let r = euler_ue5_to_matrix(&EulerUE5::new(0.0, 0.0, 90.0));
        assert!((r - rot_z(std::f64::consts::FRAC_PI_2)).amax() < 1e-15);
        let back = matrix_to_euler_ue5(&r);
        assert!(!back.gimbal_lock);
        assert!((back.angles.yaw - 90.0).abs() < 1e-6);
        assert!(back.angles.pitch.abs() < 1e-6 && back.angles.roll.abs() < 1e-6);
    }

    #[test]
    fn round_trip_random_angles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let e = EulerUE5::new(
                rng.random_range(-89.0..89.0),
                rng.random_range(-180.0..180.0),
                rng.random_range(-180.0..180.0),
            );
            let back = matrix_to_euler_ue5(&euler_ue5_to_matrix(&e));
            assert!(!back.gimbal_lock);
            assert!(wrap(back.angles.pitch - e.pitch).abs() < 1e-4);
            assert!(wrap(back.angles.roll - e.roll).abs() < 1e-4);
            assert!(wrap(back.angles.yaw - e.yaw).abs() < 1e-4);
        }
    }

    #[test]
    fn gimbal_lock_is_flagged() {
        let e = EulerUE5::new(90.0, 20.0, 35.0);
        let r = euler_ue5_to_matrix(&e);
        let back = matrix_to_euler_ue5(&r);
        assert!(back.gimbal_lock);
        assert_eq!(back.angles.roll, 0.0);
        assert!((euler_ue5_to_matrix(&back.angles) - r).amax() < 1e-9);
    }

    #[test]
    fn ue_frame_conversions() {
        let r = ue_to_camera_rotation(&Matrix3::identity());
        assert!(is_rotation(&r, 1e-12));
        // camera forward is UE +X
        assert_eq!(r * Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 0.0, 0.0));
        // camera down is UE -Z
        assert_eq!(r * Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, -1.0));
        let e = EulerUE5::new(12.0, -30.0, 140.0);
        let ue = euler_ue5_to_matrix(&e);
        let cam = ue_to_camera_rotation(&ue);
        assert!(is_rotation(&cam, 1e-12));
        assert!((camera_to_ue_rotation(&cam) - ue).amax() < 1e-14);
        let p = Vector3::new(120.0, -40.0, 7.0);
        assert!((world_to_ue_position(&ue_to_world_position(&p)) - p).norm() < 1e-12);
    }
}
