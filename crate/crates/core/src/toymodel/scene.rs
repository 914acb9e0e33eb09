use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::ToyConfig;
use crate::geometry::{build_ray_field, CameraPose, Intrinsics, RayField};
use crate::trajgen::TrajectoryRecord;
use crate::warp::Image;
use crate::Result;

/// Radius of the environment sphere, in metres.
pub const SCENE_RADIUS_M: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Wave {
    direction: [f64; 3],
    phase: f64,
    amplitude: f64,
}

/// Procedural texture on a sphere around the origin: each channel is a sum of
/// random plane waves evaluated at the unit direction of a surface point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereScene {
    channels: Vec<Vec<Wave>>,
}

impl SphereScene {
    /// `frequency` is the angular frequency in radians⁻¹; each channel has unit variance.
    pub fn new(channels: usize, waves: usize, frequency: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amp = (2.0 / waves as f64).sqrt();
        let channels = (0..channels)
            .map(|_| {
                (0..waves)
                    .map(|_| {
                        let d: [f64; 3] = UnitSphere.sample(&mut rng);
                        let jitter: f64 = StandardNormal.sample(&mut rng);
                        let scale = frequency * (1.0 + 0.25 * jitter).abs();
                        Wave {
                            direction: d.map(|x| x * scale),
                            phase: rng.random_range(0.0..std::f64::consts::TAU),
                            amplitude: amp,
                        }
                    })
                    .collect()
            })
            .collect();
        Self { channels }
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    /// Texture at a unit direction.
    pub fn sample(&self, dir: &Vector3<f64>, out: &mut [f64]) {
        for (o, waves) in out.iter_mut().zip(&self.channels) {
            *o = waves
                .iter()
                .map(|w| w.amplitude * (Vector3::from(w.direction).dot(dir) + w.phase).cos())
                .sum();
        }
    }

    /// Latents of one view: the texture where each patch-centre ray meets the sphere.
    pub fn render(&self, field: &RayField, origin: &Vector3<f64>) -> Image {
        let (rows, cols) = (field.grid.rows, field.grid.cols);
        let mut img = Image::zeros(rows, cols, self.channels());
        for (i, ray) in field.world_rays().enumerate() {
            // |o + s·r| = R with s > 0.
            let b = origin.dot(&ray);
            let c = origin.norm_squared() - SCENE_RADIUS_M * SCENE_RADIUS_M;
            let s = -b + (b * b - c).max(0.0).sqrt();
            let dir = (origin + s * ray).normalize();
            self.sample(&dir, img.pixel_mut(i / cols, i % cols));
        }
        img
    }
}

/// Default texture used by the toy experiments.
pub fn default_scene(channels: usize, seed: u64) -> SphereScene {
    SphereScene::new(channels, 32, 6.0, seed)
}

/// Camera poses and ray fields of a trajectory under the toy camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameGeometry {
    pub poses: Vec<CameraPose>,
    pub fields: Vec<RayField>,
}

pub fn frame_geometry(traj: &[TrajectoryRecord], config: &ToyConfig) -> Result<FrameGeometry> {
    let (w, h) = config.image_size();
    let k = Intrinsics::from_horizontal_fov(w, h, config.fov_h_deg)?;
    let poses = traj
        .iter()
        .map(|r| {
            let p = r.camera_pose(w, h)?;
            CameraPose::new(p.rotation, p.position, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let fields = poses
        .iter()
        .map(|p| build_ray_field(p, config.grid, config.patch_size))
        .collect::<Result<Vec<_>>>()?;
    Ok(FrameGeometry { poses, fields })
}

/// Renders the latent frame seen at every pose of `traj` in scene `scene_seed`.
pub fn synth_scene_latents(traj: &[TrajectoryRecord], scene_seed: u64, config: &ToyConfig) -> Result<Vec<Image>> {
    let scene = default_scene(config.channels, scene_seed);
    let geo = frame_geometry(traj, config)?;
    Ok(geo
        .fields
        .iter()
        .zip(&geo.poses)
        .map(|(f, p)| scene.render(f, &p.position))
        .collect())
}
