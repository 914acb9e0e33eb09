use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;

use crate::warp::Image;
use crate::{Error, Result};

/// Lower bound on the noise level used when converting a clean-latent
/// prediction into a velocity.
pub const MIN_VELOCITY_TIME: f64 = 0.05;

/// One frame on the rectified-flow path `Z_t = (1 − t)·Z₀ + t·N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedSample {
    pub clean: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub noised: DMatrix<f64>,
    pub t: f64,
}

impl NoisedSample {
    pub fn new(clean: DMatrix<f64>, noise: DMatrix<f64>, t: f64) -> Result<Self> {
        check_same(&clean, &noise, "clean/noise")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Parameter(format!("noise level {t} outside [0, 1]")));
        }
        let noised = &clean * (1.0 - t) + &noise * t;
        Ok(Self { clean, noise, noised, t })
    }

    /// Velocity target `N − Z₀`.
    pub fn target(&self) -> DMatrix<f64> {
        &self.noise - &self.clean
    }
}

fn check_same(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{what} shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean squared error between `pred` and the velocity target `N − Z₀`.
pub fn flow_matching_loss(pred: &DMatrix<f64>, clean: &DMatrix<f64>, noise: &DMatrix<f64>) -> Result<f64> {
    Ok(flow_matching_loss_grad(pred, clean, noise)?.0)
}

/// Loss and its gradient w.r.t. `pred`.
pub fn flow_matching_loss_grad(
    pred: &DMatrix<f64>,
    clean: &DMatrix<f64>,
    noise: &DMatrix<f64>,
) -> Result<(f64, DMatrix<f64>)> {
    check_same(pred, clean, "prediction/clean")?;
    check_same(pred, noise, "prediction/noise")?;
    if pred.is_empty() {
        return Err(Error::Dimension("empty prediction".into()));
    }
    let n = pred.len() as f64;
    let resid = pred - (noise - clean);
    Ok((resid.norm_squared() / n, resid * (2.0 / n)))
}

/// Velocity implied by a clean-latent estimate: `(Z_t − X̂₀) / max(t, MIN_VELOCITY_TIME)`.
pub fn velocity_from_clean(noised: &DMatrix<f64>, clean_hat: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    (noised - clean_hat) / t.max(MIN_VELOCITY_TIME)
}

/// `[patches × channels]` view of a latent frame.
pub fn image_tokens(img: &Image) -> DMatrix<f64> {
    DMatrix::from_row_slice(img.height * img.width, img.channels, &img.data)
}

pub fn tokens_image(m: &DMatrix<f64>, height: usize, width: usize) -> Result<Image> {
    if m.nrows() != height * width {
        return Err(Error::Dimension(format!("{} tokens for a {height}x{width} grid", m.nrows())));
    }
    let data = m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect();
    Image::new(height, width, m.ncols(), data)
}

/// Network input per token: latent channels followed by `t, sin(πt/2), cos(πt/2)`.
pub fn token_features(latents: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let c = latents.ncols();
    let (s, co) = (t * FRAC_PI_2).sin_cos();
    DMatrix::from_fn(latents.nrows(), c + 3, |i, j| match j {
        j if j < c => latents[(i, j)],
        j if j == c => t,
        j if j == c + 1 => s,
        _ => co,
    })
}
