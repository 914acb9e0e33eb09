//! Pinhole cameras, SE(3) poses, per-patch viewing rays and the rotation
//! fields consumed by the rotary view encoding.
//!
//! Conventions used throughout the crate:
//!
//! * camera frame: x right, y down, z forward (optical axis);
//! * `CameraPose::rotation` maps camera-frame vectors into the (right-handed)
//!   world frame, `CameraPose::position` is the camera centre in world units;
//! * all rotation math is carried out in `f64`.

mod camera;
mod euler;
mod rays;

pub use camera::{pose_similarity, revisit, CameraPose, Intrinsics, DEFAULT_TRANSLATION_WEIGHT};
pub use euler::{
    camera_to_ue_rotation, euler_ue5_to_matrix, matrix_to_euler_ue5, ue_to_camera_rotation,
    ue_to_world_position, world_to_ue_position, EulerDecomposition, EulerUE5,
};
pub use rays::{build_ray_field, local_rotation, pixel_ray, view_rotation, PatchGrid, RayField};

use nalgebra::{Matrix3, Vector3};

/// Tolerance for the orthogonality / determinant checks on SO(3) inputs.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Returns `true` when `m` is orthogonal with determinant +1 within `tol`.
pub fn is_rotation(m: &Matrix3<f64>, tol: f64) -> bool {
    let gram = m.transpose() * m;
    let ortho = (gram - Matrix3::identity()).amax() <= tol;
    ortho && (m.determinant() - 1.0).abs() <= tol
}

pub(crate) fn check_rotation(m: &Matrix3<f64>, what: &str) -> crate::Result<()> {
    if is_rotation(m, ROTATION_TOLERANCE) {
        Ok(())
    } else {
        Err(crate::Error::InvalidRotation(format!(
            "{what} is not in SO(3) within {ROTATION_TOLERANCE:e}"
        )))
    }
}

/// Geodesic distance on SO(3) in radians, in `[0, π]`.
///
/// Symmetric bit-for-bit in its arguments and exactly zero for identical inputs.
pub fn geodesic_angle(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    if a == b {
        return 0.0;
    }
    let rel = a.transpose() * b;
    let cos = 0.5 * (rel.trace() - 1.0);
    let axis = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let sin = 0.5 * axis.norm();
    sin.atan2(cos)
}

/// Rotation about the x axis by `angle` radians.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Rotation about the y axis by `angle` radians.
pub fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Rotation about the z axis by `angle` radians.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Axis-angle (Rodrigues) rotation; `axis` need not be normalized.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let n = axis.normalize();
    let k = n.cross_matrix();
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn geodesic_of_quarter_turn() {
        let a = Matrix3::identity();
        let b = rot_z(FRAC_PI_2);
        assert!((geodesic_angle(&a, &b) - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(geodesic_angle(&a, &b), geodesic_angle(&b, &a));
        assert_eq!(geodesic_angle(&b, &b), 0.0);
    }

    #[test]
    fn geodesic_near_half_turn() {
        let a = rot_x(3.0);
        assert!((geodesic_angle(&Matrix3::identity(), &a) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_matches_elementary() {
        let r = axis_angle(&Vector3::new(0.0, 2.0, 0.0), 0.3);
        assert!((r - rot_y(0.3)).amax() < 1e-15);
        assert!(is_rotation(&r, 1e-12));
    }
}
