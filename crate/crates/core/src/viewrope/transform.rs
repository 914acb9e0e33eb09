use nalgebra::Matrix3;

use super::ChannelLayout;
use crate::geometry::{PatchGrid, RayField};
use crate::tensor::TokenTensor;
use crate::{Error, Real, Result};

pub(crate) type Mat3<T> = [[T; 3]; 3];

pub(crate) fn to_mat3<T: Real>(r: &Matrix3<f64>, transpose: bool) -> Mat3<T> {
    let mut m = [[T::zero(); 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = T::from_f64(if transpose { r[(j, i)] } else { r[(i, j)] });
        }
    }
    m
}

#[inline]
pub(crate) fn rotate_subvectors<T: Real>(v: &mut [T], m: &Mat3<T>, starts: &[usize]) {
    for &s in starts {
        let (a, b, c) = (v[s], v[s + 1], v[s + 2]);
        v[s] = m[0][0] * a + m[0][1] * b + m[0][2] * c;
        v[s + 1] = m[1][0] * a + m[1][1] * b + m[1][2] * c;
        v[s + 2] = m[2][0] * a + m[2][1] * b + m[2][2] * c;
    }
}

fn check_len(len: usize, layout: &ChannelLayout) -> Result<()> {
    if len != layout.total_dims {
        return Err(Error::Dimension(format!(
            "vector of {len} channels, layout expects {}",
            layout.total_dims
        )));
    }
    Ok(())
}

/// Rotates every 3-subvector of the view-rotation band(s) by `r`, in place.
pub fn vr_transform_in_place<T: Real>(vec: &mut [T], r: &Matrix3<f64>, layout: &ChannelLayout) -> Result<()> {
    layout.validate()?;
    check_len(vec.len(), layout)?;
    rotate_subvectors(vec, &to_mat3(r, false), &layout.subvector_starts());
    Ok(())
}

/// `VR(v, R)`: the view-rotation band split into consecutive triples, each left-multiplied by `R`.
pub fn vr_transform<T: Real>(vec: &[T], r: &Matrix3<f64>, layout: &ChannelLayout) -> Result<Vec<T>> {
    let mut out = vec.to_vec();
    vr_transform_in_place(&mut out, r, layout)?;
    Ok(out)
}

/// Rotates every head of every token by its per-token rotation (or its transpose).
pub fn rotate_tokens<T: Real>(
    tokens: &mut TokenTensor<T>,
    rotations: &[Matrix3<f64>],
    layout: &ChannelLayout,
    transpose: bool,
) -> Result<()> {
    if rotations.len() != tokens.len() {
        return Err(Error::Dimension(format!(
            "{} rotations for {} tokens",
            rotations.len(),
            tokens.len()
        )));
    }
    check_len(tokens.dim(), layout)?;
    let starts = layout.subvector_starts();
    for (l, r) in rotations.iter().enumerate() {
        let m = to_mat3::<T>(r, transpose);
        for h in 0..tokens.heads() {
            rotate_subvectors(tokens.vector_mut(l, h), &m, &starts);
        }
    }
    Ok(())
}

/// Which ray field and layout produced a [`RotatedQK`].
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub grid: PatchGrid,
    pub patch_size: usize,
    pub layout: ChannelLayout,
}

/// Queries and keys after the view rotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedQK<T> {
    pub q: TokenTensor<T>,
    pub k: TokenTensor<T>,
    pub provenance: Provenance,
}

/// Rotates each token's query and key by the world rotation of its patch.
pub fn apply_viewrope<T: Real>(
    q_tokens: &TokenTensor<T>,
    k_tokens: &TokenTensor<T>,
    ray_field: &RayField,
    layout: &ChannelLayout,
) -> Result<RotatedQK<T>> {
    layout.validate()?;
    for (name, t) in [("query", q_tokens), ("key", k_tokens)] {
        if t.len() != ray_field.len() {
            return Err(Error::Dimension(format!(
                "{name} grid has {} tokens, ray field has {} patches",
                t.len(),
                ray_field.len()
            )));
        }
    }
    let mut q = q_tokens.clone();
    let mut k = k_tokens.clone();
    rotate_tokens(&mut q, &ray_field.rotations_world, layout, false)?;
    rotate_tokens(&mut k, &ray_field.rotations_world, layout, false)?;
    Ok(RotatedQK {
        q,
        k,
        provenance: Provenance {
            grid: ray_field.grid,
            patch_size: ray_field.patch_size,
            layout: layout.clone(),
        },
    })
}

/// `⟨VR(q, R_i), VR(k, R_j)⟩`.
pub fn relative_score<T: Real>(
    q: &[T],
    k: &[T],
    r_i: &Matrix3<f64>,
    r_j: &Matrix3<f64>,
    layout: &ChannelLayout,
) -> Result<T> {
    check_len(k.len(), layout)?;
    let a = vr_transform(q, r_i, layout)?;
    let b = vr_transform(k, r_j, layout)?;
    Ok(a.iter().zip(&b).map(|(&x, &y)| x * y).sum())
}

/// Same score evaluated as `qᵀ(R_i⁻¹R_j)k` on the band plus the plain dot product elsewhere.
pub fn relative_score_via_relative_rotation<T: Real>(
    q: &[T],
    k: &[T],
    r_i: &Matrix3<f64>,
    r_j: &Matrix3<f64>,
    layout: &ChannelLayout,
) -> Result<T> {
    layout.validate()?;
    check_len(q.len(), layout)?;
    check_len(k.len(), layout)?;
    let rel = to_mat3::<T>(&(r_i.transpose() * r_j), false);
    let mut score = T::zero();
    for c in 0..q.len() {
        if !layout.in_viewrope_band(c) {
            score += q[c] * k[c];
        }
    }
    for s in layout.subvector_starts() {
        for (i, row) in rel.iter().enumerate() {
            score += q[s + i] * (row[0] * k[s] + row[1] * k[s + 1] + row[2] * k[s + 2]);
        }
    }
    Ok(score)
}
