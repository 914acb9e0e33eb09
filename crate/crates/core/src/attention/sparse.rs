use rayon::prelude::*;

use super::dense::scatter_heads;
use super::{axpy, dot, AttentionGrads, AttentionOutput, BlockMask, TokenBlockSet};
use crate::tensor::TokenTensor;
use crate::{Error, Real, Result};

/// Running state of a streaming softmax over key tiles.
struct OnlineSoftmax<T> {
    max: T,
    denom: T,
    acc: Vec<T>,
}

impl<T: Real> OnlineSoftmax<T> {
    fn new(d: usize) -> Self {
        Self {
            max: T::neg_infinity(),
            denom: T::zero(),
            acc: vec![T::zero(); d],
        }
    }

    /// Folds one tile of scores with the matching value rows.
    fn absorb<'a>(&mut self, scores: &[T], values: impl Iterator<Item = &'a [T]>) {
        let tile_max = scores.iter().copied().fold(T::neg_infinity(), T::max);
        let new_max = self.max.max(tile_max);
        if self.max != T::neg_infinity() && new_max != self.max {
            let c = (self.max - new_max).exp();
            self.denom *= c;
            for a in &mut self.acc {
                *a *= c;
            }
        }
        self.max = new_max;
        for (&s, v) in scores.iter().zip(values) {
            let p = (s - new_max).exp();
            self.denom += p;
            axpy(p, v, &mut self.acc);
        }
    }

    fn finish(mut self) -> (T, T, Vec<T>) {
        let inv = T::one() / self.denom;
        for a in &mut self.acc {
            *a *= inv;
        }
        (self.max, self.denom, self.acc)
    }
}

fn check_mask<T: Real>(blocks: &TokenBlockSet<T>, mask: &BlockMask) -> Result<()> {
    mask.check_shape(blocks.query_blocks(), blocks.key_blocks(), "selection mask")
}

/// Block-sparse attention: each query block attends only to the key blocks
/// set in its mask row. Tiles are processed with a streaming softmax.
pub fn sparse_attention<T: Real>(blocks: &TokenBlockSet<T>, mask: &BlockMask) -> Result<AttentionOutput<T>> {
    check_mask(blocks, mask)?;
    let b = blocks.block_size;
    let (heads, d) = (blocks.heads(), blocks.dim());
    let (q, k, v) = (&blocks.q, &blocks.k, &blocks.v);
    let scale = T::one() / T::from_f64(d as f64).sqrt();

    let mut out = TokenTensor::zeros(q.len(), heads, d);
    let mut empty_rows = vec![false; q.len()];
    out.as_mut_slice()
        .par_chunks_mut(b * heads * d)
        .zip(empty_rows.par_chunks_mut(b))
        .enumerate()
        .for_each(|(r, (tile_out, empty))| {
            let selected = mask.row_indices(r);
            if selected.is_empty() {
                empty.fill(true);
                return;
            }
            let mut scores = vec![T::zero(); b];
            for t in 0..b {
                let i = r * b + t;
                for h in 0..heads {
                    let qv = q.vector(i, h);
                    let mut state = OnlineSoftmax::new(d);
                    for &c in &selected {
                        for (s, j) in scores.iter_mut().zip(c * b..(c + 1) * b) {
                            *s = dot(qv, k.vector(j, h)) * scale;
                        }
                        state.absorb(&scores, (c * b..(c + 1) * b).map(|j| v.vector(j, h)));
                    }
                    let (_, _, o) = state.finish();
                    let base = (t * heads + h) * d;
                    tile_out[base..base + d].copy_from_slice(&o);
                }
            }
        });

    Ok(AttentionOutput {
        out,
        empty_rows,
        macs: sparse_macs(mask, b, heads, d),
    })
}

/// Multiply-accumulates of [`sparse_attention`] for a given mask.
pub(super) fn sparse_macs(mask: &BlockMask, block_size: usize, heads: usize, d: usize) -> u64 {
    (mask.count() * block_size * block_size * heads * 2 * d) as u64
}

/// Gradients of `⟨d_out, sparse_attention(blocks, mask)⟩`.
pub fn sparse_attention_backward<T: Real>(
    blocks: &TokenBlockSet<T>,
    mask: &BlockMask,
    d_out: &TokenTensor<T>,
) -> Result<AttentionGrads<T>> {
    check_mask(blocks, mask)?;
    blocks.q.check_same_layout(d_out, "query/upstream gradient")?;
    if d_out.len() != blocks.q.len() {
        return Err(Error::Dimension("upstream gradient length differs from queries".into()));
    }
    let b = blocks.block_size;
    let (heads, d) = (blocks.heads(), blocks.dim());
    let (q, k, v) = (&blocks.q, &blocks.k, &blocks.v);
    let (lq, lk) = (q.len(), k.len());
    let scale = T::one() / T::from_f64(d as f64).sqrt();

    let per_head: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..heads)
        .into_par_iter()
        .map(|h| {
            let mut dq = vec![T::zero(); lq * d];
            let mut dk = vec![T::zero(); lk * d];
            let mut dv = vec![T::zero(); lk * d];
            let mut scores = vec![T::zero(); b];
            for r in 0..blocks.query_blocks() {
                let selected = mask.row_indices(r);
                if selected.is_empty() {
                    continue;
                }
                for i in r * b..(r + 1) * b {
                    let qv = q.vector(i, h);
                    let go = d_out.vector(i, h);
                    // Pass 1: recompute the softmax statistics and the output row.
                    let mut state = OnlineSoftmax::new(d);
                    for &c in &selected {
                        for (s, j) in scores.iter_mut().zip(c * b..(c + 1) * b) {
                            *s = dot(qv, k.vector(j, h)) * scale;
                        }
                        state.absorb(&scores, (c * b..(c + 1) * b).map(|j| v.vector(j, h)));
                    }
                    let (max, denom, o) = state.finish();
                    let delta = dot(go, &o);
                    // Pass 2: tile-wise gradient accumulation.
                    for &c in &selected {
                        for j in c * b..(c + 1) * b {
                            let kv = k.vector(j, h);
                            let p = ((dot(qv, kv) * scale - max).exp()) / denom;
                            axpy(p, go, &mut dv[j * d..(j + 1) * d]);
                            let dp = dot(go, v.vector(j, h));
                            let ds = p * (dp - delta) * scale;
                            axpy(ds, kv, &mut dq[i * d..(i + 1) * d]);
                            axpy(ds, qv, &mut dk[j * d..(j + 1) * d]);
                        }
                    }
                }
            }
            (dq, dk, dv)
        })
        .collect();

    Ok(scatter_heads(per_head, lq, lk, heads, d))
}
