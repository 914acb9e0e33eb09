use rayon::prelude::*;

use super::{axpy, check_qkv, dot, AttentionGrads, AttentionMask, AttentionOutput};
use crate::tensor::TokenTensor;
use crate::{Real, Result};

/// Reference softmax attention, token by token, with an optional mask.
pub fn dense_attention<T: Real>(
    q: &TokenTensor<T>,
    k: &TokenTensor<T>,
    v: &TokenTensor<T>,
    mask: AttentionMask<'_>,
) -> Result<AttentionOutput<T>> {
    check_qkv(q, k, v)?;
    let (lq, lk) = (q.len(), k.len());
    mask.check(lq, lk)?;
    let (heads, d) = (q.heads(), q.dim());
    let scale = T::one() / T::from_f64(d as f64).sqrt();

    let mut out = TokenTensor::zeros(lq, heads, d);
    let mut empty_rows = vec![false; lq];
    out.as_mut_slice()
        .par_chunks_mut(heads * d)
        .zip(empty_rows.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, empty))| {
            let keys: Vec<usize> = (0..lk).filter(|&j| mask.allows(i, j)).collect();
            if keys.is_empty() {
                *empty = true;
                return;
            }
            let mut scores = vec![T::zero(); keys.len()];
            for h in 0..heads {
                let qv = q.vector(i, h);
                let mut max = T::neg_infinity();
                for (s, &j) in scores.iter_mut().zip(&keys) {
                    *s = dot(qv, k.vector(j, h)) * scale;
                    max = max.max(*s);
                }
                let mut sum = T::zero();
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let o = &mut row[h * d..(h + 1) * d];
                for (&p, &j) in scores.iter().zip(&keys) {
                    axpy(p / sum, v.vector(j, h), o);
                }
            }
        });

    let pairs: usize = (0..lq).map(|i| (0..lk).filter(|&j| mask.allows(i, j)).count()).sum();
    Ok(AttentionOutput {
        out,
        empty_rows,
        macs: (pairs * heads * 2 * d) as u64,
    })
}

/// Gradients of `⟨d_out, dense_attention(q, k, v, mask)⟩`. Rows with no
/// admissible key contribute nothing.
pub fn dense_attention_backward<T: Real>(
    q: &TokenTensor<T>,
    k: &TokenTensor<T>,
    v: &TokenTensor<T>,
    mask: AttentionMask<'_>,
    d_out: &TokenTensor<T>,
) -> Result<AttentionGrads<T>> {
    check_qkv(q, k, v)?;
    q.check_same_layout(d_out, "query/upstream gradient")?;
    if d_out.len() != q.len() {
        return Err(crate::Error::Dimension("upstream gradient length differs from queries".into()));
    }
    let (lq, lk) = (q.len(), k.len());
    mask.check(lq, lk)?;
    let (heads, d) = (q.heads(), q.dim());
    let scale = T::one() / T::from_f64(d as f64).sqrt();

    // Heads are independent: compute each head's gradients in parallel, then scatter.
    let per_head: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..heads)
        .into_par_iter()
        .map(|h| {
            let mut dq = vec![T::zero(); lq * d];
            let mut dk = vec![T::zero(); lk * d];
            let mut dv = vec![T::zero(); lk * d];
            let mut probs = Vec::new();
            let mut dps = Vec::new();
            for i in 0..lq {
                let keys: Vec<usize> = (0..lk).filter(|&j| mask.allows(i, j)).collect();
                if keys.is_empty() {
                    continue;
                }
                let qv = q.vector(i, h);
                let go = d_out.vector(i, h);
                probs.clear();
                let mut max = T::neg_infinity();
                for &j in &keys {
                    let s = dot(qv, k.vector(j, h)) * scale;
                    max = max.max(s);
                    probs.push(s);
                }
                let mut sum = T::zero();
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                dps.clear();
                let mut weighted = T::zero();
                for (p, &j) in probs.iter_mut().zip(&keys) {
                    *p /= sum;
                    let dp = dot(go, v.vector(j, h));
                    weighted += *p * dp;
                    dps.push(dp);
                }
                for ((&p, &dp), &j) in probs.iter().zip(&dps).zip(&keys) {
                    axpy(p, go, &mut dv[j * d..(j + 1) * d]);
                    let ds = p * (dp - weighted) * scale;
                    axpy(ds, k.vector(j, h), &mut dq[i * d..(i + 1) * d]);
                    axpy(ds, qv, &mut dk[j * d..(j + 1) * d]);
                }
            }
            (dq, dk, dv)
        })
        .collect();

    Ok(scatter_heads(per_head, lq, lk, heads, d))
}

pub(super) fn scatter_heads<T: Real>(
    per_head: Vec<(Vec<T>, Vec<T>, Vec<T>)>,
    lq: usize,
    lk: usize,
    heads: usize,
    d: usize,
) -> AttentionGrads<T> {
    let mut dq = TokenTensor::zeros(lq, heads, d);
    let mut dk = TokenTensor::zeros(lk, heads, d);
    let mut dv = TokenTensor::zeros(lk, heads, d);
    for (h, (gq, gk, gv)) in per_head.into_iter().enumerate() {
        for i in 0..lq {
            dq.vector_mut(i, h).copy_from_slice(&gq[i * d..(i + 1) * d]);
        }
        for j in 0..lk {
            dk.vector_mut(j, h).copy_from_slice(&gk[j * d..(j + 1) * d]);
            dv.vector_mut(j, h).copy_from_slice(&gv[j * d..(j + 1) * d]);
        }
    }
    AttentionGrads { dq, dk, dv }
}
