use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_rotation, CameraPose, Intrinsics};
use crate::{Error, Result};

/// Rays closer than this to `-z` use the fixed half-turn about x.
const ANTIPODAL_TOLERANCE: f64 = 1e-6;
const UNIT_TOLERANCE: f64 = 1e-6;

/// Patch grid of one view: `rows × cols` patches, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalized viewing ray of pixel `(u, v)` in the camera frame.
pub fn pixel_ray(k: &Intrinsics, u: f64, v: f64) -> Result<Vector3<f64>> {
    k.validate()?;
    if !(0.0..=k.width as f64).contains(&u) || !(0.0..=k.height as f64).contains(&v) {
        return Err(Error::Bounds(format!(
            "pixel ({u}, {v}) outside {}x{} image",
            k.width, k.height
        )));
    }
    let d = k.unproject(u, v);
    Ok(d / d.norm())
}

/// Minimal geodesic rotation taking the optical axis `[0, 0, 1]` onto `ray`.
///
/// The rotation axis is `z × ray` and the angle `acos(z·ray)`, so there is no
/// twist about the ray. Rays within 1e-6 of `-z` map to `diag(1, -1, -1)`.
pub fn local_rotation(ray: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let n = ray.norm();
    if !n.is_finite() || (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidRay(format!("expected a unit vector, got norm {n}")));
    }
    if (ray - Vector3::new(0.0, 0.0, -1.0)).norm() <= ANTIPODAL_TOLERANCE {
        return Ok(Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0));
    }
    let (x, y, c) = (ray.x, ray.y, ray.z);
    // R = I + [v]× + [v]×² / (1 + c), v = z × r = (-y, x, 0).
    // Near c = -1 the factor is rewritten as (1 - c) / |v|² to avoid cancellation.
    let vv = x * x + y * y;
    let f = if c > 0.0 { 1.0 / (1.0 + c) } else { (1.0 - c) / vv };
    Ok(Matrix3::new(
        1.0 - f * x * x,
        -f * x * y,
        x,
        -f * x * y,
        1.0 - f * y * y,
        y,
        -x,
        -y,
        1.0 - f * vv,
    ))
}

/// World-aligned view rotation `R_cam · R_local`.
pub fn view_rotation(pose: &CameraPose, local: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    check_rotation(&pose.rotation, "camera rotation")?;
    check_rotation(local, "local rotation")?;
    Ok(pose.rotation * local)
}

/// Per-patch rays and rotations of one posed view.
#[derive(Debug, Clone, PartialEq)]
pub struct RayField {
    pub grid: PatchGrid,
    pub patch_size: usize,
    pub rays: Vec<Vector3<f64>>,
    pub rotations_local: Vec<Matrix3<f64>>,
    pub rotations_world: Vec<Matrix3<f64>>,
}

impl RayField {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// World-frame unit direction of every patch ray.
    pub fn world_rays(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        self.rotations_world.iter().map(|r| r.column(2).into_owned())
    }
}

/// Samples rays at patch centres `((col + 0.5)·s, (row + 0.5)·s)`.
pub fn build_ray_field(pose: &CameraPose, grid: PatchGrid, patch_size: usize) -> Result<RayField> {
    let k = &pose.intrinsics;
    if patch_size == 0 || grid.is_empty() {
        return Err(Error::Bounds("empty patch grid".into()));
    }
    if grid.cols * patch_size > k.width as usize || grid.rows * patch_size > k.height as usize {
        return Err(Error::Bounds(format!(
            "{}x{} patches of {patch_size}px exceed {}x{} image",
            grid.rows, grid.cols, k.width, k.height
        )));
    }
    check_rotation(&pose.rotation, "camera rotation")?;

    let mut rays = Vec::with_capacity(grid.len());
    let mut rotations_local = Vec::with_capacity(grid.len());
    let mut rotations_world = Vec::with_capacity(grid.len());
    let s = patch_size as f64;
    for row in 0..grid.rows {
        for col in 0..grid.cols {
            let ray = pixel_ray(k, (col as f64 + 0.5) * s, (row as f64 + 0.5) * s)?;
            let local = local_rotation(&ray)?;
            rotations_world.push(pose.rotation * local);
            rotations_local.push(local);
            rays.push(ray);
        }
    }
    Ok(RayField {
        grid,
        patch_size,
        rays,
        rotations_local,
        rotations_world,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_angle, is_rotation, rot_y, rot_z};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn z() -> Vector3<f64> {
        Vector3::new(0.0, 0.0, 1.0)
    }

    #[test]
    fn pixel_ray_examples() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).unwrap();
        assert_eq!(pixel_ray(&k, 0.0, 0.0).unwrap(), z());

        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap();
        assert_eq!(pixel_ray(&k, 50.0, 50.0).unwrap(), z());
        let r = pixel_ray(&k, 150.0, 50.0).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((r - Vector3::new(h, 0.0, h)).norm() < 1e-12);
    }

    #[test]
    fn pixel_ray_bounds() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        assert!(matches!(pixel_ray(&k, 101.0, 0.0), Err(Error::Bounds(_))));
        let bad = Intrinsics { fx: 0.0, ..k };
        assert!(matches!(pixel_ray(&bad, 1.0, 1.0), Err(Error::InvalidIntrinsics(_))));
    }

    #[test]
    fn local_rotation_examples() {
        assert_eq!(local_rotation(&z()).unwrap(), Matrix3::identity());

        // axis-angle oracle: axis z × r, angle acos(z·r)
        let r = Vector3::new(1.0, 0.0, 0.0);
        let oracle = axis_angle(&z().cross(&r), z().dot(&r).acos());
        let got = local_rotation(&r).unwrap();
        assert!((got - oracle).amax() < 1e-12);
        assert!((got - rot_y(FRAC_PI_2)).amax() < 1e-12);
        assert!((got * z() - r).norm() < 1e-12);

        let anti = local_rotation(&Vector3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(anti, Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)));
    }

    #[test]
    fn local_rotation_rejects_non_unit() {
        assert!(local_rotation(&Vector3::new(0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn local_rotation_near_antipode_is_accurate() {
        let r = Vector3::new(3e-6, -2e-6, -1.0).normalize();
        let m = local_rotation(&r).unwrap();
        assert!((m * z() - r).norm() < 1e-9);
        assert!(is_rotation(&m, 1e-9));
    }

    #[test]
    fn view_rotation_examples() {
        let k = Intrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
        let pose = CameraPose::identity(k);
        assert_eq!(view_rotation(&pose, &Matrix3::identity()).unwrap(), Matrix3::identity());
        let yaw = CameraPose { rotation: rot_z(FRAC_PI_2), ..pose.clone() };
        assert_eq!(view_rotation(&yaw, &Matrix3::identity()).unwrap(), rot_z(FRAC_PI_2));

        let a = axis_angle(&Vector3::new(1.0, 2.0, 3.0), 0.7);
        let b = axis_angle(&Vector3::new(-1.0, 0.5, 0.2), 2.1);
        let pose = CameraPose { rotation: a, ..pose };
        let got = view_rotation(&pose, &b).unwrap();
        let mut oracle = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for l in 0..3 {
                    oracle[(i, j)] += a[(i, l)] * b[(l, j)];
                }
            }
        }
        assert!((got - oracle).amax() < 1e-14);
        assert!(is_rotation(&got, 1e-12));
        assert!(view_rotation(&pose, &(b * 2.0)).is_err());
    }

    #[test]
    fn ray_field_single_patch() {
        let k = Intrinsics::new(20.0, 20.0, 4.0, 4.0, 8, 8).unwrap();
        let pose = CameraPose { rotation: rot_z(0.3), ..CameraPose::identity(k) };
        let field = build_ray_field(&pose, PatchGrid::new(1, 1), 8).unwrap();
        assert_eq!(field.rays[0], z());
        assert_eq!(field.rotations_world[0], pose.rotation);
    }

    #[test]
    fn ray_field_symmetry_and_bounds() {
        let k = Intrinsics::new(30.0, 30.0, 16.0, 16.0, 32, 32).unwrap();
        let pose = CameraPose::identity(k);
        let f = build_ray_field(&pose, PatchGrid::new(2, 2), 16).unwrap();
        let (a, b, c, d) = (f.rays[0], f.rays[1], f.rays[2], f.rays[3]);
        assert!((a - Vector3::new(-b.x, b.y, b.z)).norm() < 1e-12);
        assert!((a - Vector3::new(c.x, -c.y, c.z)).norm() < 1e-12);
        assert!((a - Vector3::new(-d.x, -d.y, d.z)).norm() < 1e-12);
        assert!(matches!(
            build_ray_field(&pose, PatchGrid::new(3, 2), 16),
            Err(Error::Bounds(_))
        ));
    }

    fn check_field_invariants(field: &RayField, pose: &CameraPose) {
        for i in 0..field.len() {
            assert!((field.rays[i].norm() - 1.0).abs() < 1e-6);
            assert!((field.rotations_local[i] * z() - field.rays[i]).norm() < 1e-6);
            assert!((field.rotations_world[i] - pose.rotation * field.rotations_local[i]).amax() < 1e-6);
            assert!(is_rotation(&field.rotations_world[i], 1e-6));
        }
    }

    proptest! {
        #[test]
        fn unit_norm_rays(u in 0.0f64..640.0, v in 0.0f64..480.0, f in 50.0f64..2000.0) {
            let k = Intrinsics::new(f, f * 1.1, 320.0, 240.0, 640, 480).unwrap();
            let r = pixel_ray(&k, u, v).unwrap();
            prop_assert!((r.norm() - 1.0).abs() < 1e-6);
            prop_assert!(r.z > 0.0);
        }

        #[test]
        fn local_rotation_maps_axis(x in -1.0f64..1.0, y in -1.0f64..1.0, zz in -1.0f64..1.0) {
            let v = Vector3::new(x, y, zz);
            prop_assume!(v.norm() > 1e-3);
            let r = v.normalize();
            let m = local_rotation(&r).unwrap();
            prop_assert!((m * z() - r).norm() < 1e-6);
            prop_assert!(is_rotation(&m, 1e-6));
        }

        #[test]
        fn global_rotation_associativity(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
            let k = Intrinsics::new(1.0, 1.0, 0.5, 0.5, 1, 1).unwrap();
            let g = axis_angle(&Vector3::new(1.0, a, b), c);
            let cam = rot_z(a) * rot_y(b);
            let local = local_rotation(&Vector3::new(0.3, -0.2, 0.9).normalize()).unwrap();
            let base = view_rotation(&CameraPose { rotation: cam, ..CameraPose::identity(k) }, &local).unwrap();
            let moved = view_rotation(&CameraPose { rotation: g * cam, ..CameraPose::identity(k) }, &local).unwrap();
            prop_assert!((moved - g * base).amax() < 1e-10);
        }

        #[test]
        fn ray_field_invariants(yaw in -3.0f64..3.0, rows in 1usize..5, cols in 1usize..6) {
            let k = Intrinsics::from_horizontal_fov(cols as u32 * 8, rows as u32 * 8, 75.0).unwrap();
            let pose = CameraPose { rotation: rot_z(yaw) * rot_y(0.3 * yaw), ..CameraPose::identity(k) };
            let field = build_ray_field(&pose, PatchGrid::new(rows, cols), 8).unwrap();
            check_field_invariants(&field, &pose);
        }
    }
}
