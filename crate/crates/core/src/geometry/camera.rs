use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_rotation, geodesic_angle};
use crate::{Error, Result};

/// Default weight λ converting world-unit translation into the pose-similarity scale.
pub const DEFAULT_TRANSLATION_WEIGHT: f64 = 0.1;

/// Pinhole intrinsics without skew. Pixel coordinates are `(u, v)` = (column, row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centred principal point and square pixels derived from a horizontal field of view.
    pub fn from_horizontal_fov(width: u32, height: u32, fov_h_deg: f64) -> Result<Self> {
        if !(fov_h_deg > 0.0 && fov_h_deg < 180.0) {
            return Err(Error::InvalidIntrinsics(format!(
                "horizontal fov {fov_h_deg} outside (0, 180)"
            )));
        }
        let f = 0.5 * width as f64 / (0.5 * fov_h_deg.to_radians()).tan();
        Self::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidIntrinsics("non-finite entry".into()));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx > self.width as f64 || self.cy < 0.0 || self.cy > self.height as f64 {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form K⁻¹.
    pub fn inverse(&self) -> Result<Matrix3<f64>> {
        self.validate()?;
        Ok(Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        ))
    }

    /// K⁻¹[u, v, 1]ᵀ, evaluated component-wise so the principal point maps to `[0, 0, 1]` exactly.
    pub fn unproject(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// π(K·X); `None` when the point is not strictly in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        if !(x.z > 0.0) {
            return None;
        }
        Some((self.fx * x.x / x.z + self.cx, self.fy * x.y / x.z + self.cy))
    }

    pub fn fov_h_deg(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan().to_degrees()
    }

    pub fn fov_v_deg(&self) -> f64 {
        2.0 * (0.5 * self.height as f64 / self.fy).atan().to_degrees()
    }
}

/// Camera rotation (world-from-camera), centre and intrinsics for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>, intrinsics: Intrinsics) -> Result<Self> {
        check_rotation(&rotation, "camera rotation")?;
        intrinsics.validate()?;
        Ok(Self {
            rotation,
            position,
            intrinsics,
        })
    }

    pub fn identity(intrinsics: Intrinsics) -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
            intrinsics,
        }
    }

    /// World-to-camera extrinsics `(R_ext, t_ext)` with `X_cam = R_ext·X_world + t_ext`.
    pub fn extrinsic(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let r = self.rotation.transpose();
        let t = -(r * self.position);
        (r, t)
    }

    pub fn camera_to_world(&self, x_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x_cam + self.position
    }

    pub fn world_to_camera(&self, x_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (x_world - self.position)
    }
}

/// Δ(a, b) = geodesic rotation angle (rad) + λ·‖P_a − P_b‖.
pub fn pose_similarity(a: &CameraPose, b: &CameraPose, translation_weight: f64) -> f64 {
    let angle = geodesic_angle(&a.rotation, &b.rotation);
    let dist = if a.position == b.position {
        0.0
    } else {
        (a.position - b.position).norm()
    };
    angle + translation_weight * dist
}

/// Revisit indicator: `Δ(a, b) ≤ eps`.
pub fn revisit(a: &CameraPose, b: &CameraPose, eps: f64, translation_weight: f64) -> bool {
    pose_similarity(a, b, translation_weight) <= eps
}
