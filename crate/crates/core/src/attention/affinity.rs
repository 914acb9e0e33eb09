use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BlockMask, TokenBlockSet};
use crate::{Error, Real, Result};

/// Estimated block-to-block relevance. Masked entries hold `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockAffinity {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[rows × cols]`.
    pub scores: Vec<f64>,
    pub sample_count: usize,
    /// Within-block positions shared by every block pair and head.
    pub sample_indices: Vec<usize>,
    /// Multiply-accumulates spent estimating the finite entries.
    pub macs: u64,
}

impl BlockAffinity {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.cols..(i + 1) * self.cols]
    }

    pub fn self_index(&self, row: usize) -> usize {
        row + self.cols - self.rows
    }

    /// Entries that are finite.
    pub fn finite_mask(&self) -> BlockMask {
        BlockMask::from_fn(self.rows, self.cols, |i, j| self.get(i, j).is_finite())
    }
}

/// Draws `count` distinct positions from `0..block_size`, returned ascending.
pub fn sample_block_indices(block_size: usize, count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 || count > block_size {
        return Err(Error::Parameter(format!(
            "sample count {count} must lie in 1..={block_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, block_size, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Head-averaged sampled affinity without any mask.
pub fn block_affinity_from_indices<T: Real>(blocks: &TokenBlockSet<T>, indices: &[usize]) -> Result<BlockAffinity> {
    let b = blocks.block_size;
    if indices.is_empty() || indices.len() > b || indices.iter().any(|&s| s >= b) {
        return Err(Error::Parameter(format!(
            "sample indices must be a non-empty subset of 0..{b}"
        )));
    }
    let rows = blocks.query_blocks();
    let cols = blocks.key_blocks();
    let heads = blocks.heads();
    let d = blocks.dim();
    let norm = 1.0 / (heads as f64 * indices.len() as f64);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut scores = vec![0.0; rows * cols];
    scores.par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for h in 0..heads {
                for &s in indices {
                    let q = blocks.q.vector(i * b + s, h);
                    let k = blocks.k.vector(j * b + s, h);
                    let dot: f64 = q.iter().zip(k).map(|(x, y)| x.as_f64() * y.as_f64()).sum();
                    acc += dot * inv_sqrt_d;
                }
            }
            *cell = acc * norm;
        }
    });
    Ok(BlockAffinity {
        rows,
        cols,
        scores,
        sample_count: indices.len(),
        sample_indices: indices.to_vec(),
        macs: (rows * cols * heads * indices.len() * d) as u64,
    })
}

/// Samples the shared index set and returns the causally masked affinity.
pub fn estimate_block_affinity<T: Real>(
    blocks: &TokenBlockSet<T>,
    sample_count: usize,
    seed: u64,
) -> Result<BlockAffinity> {
    let indices = sample_block_indices(blocks.block_size, sample_count, seed)?;
    let raw = block_affinity_from_indices(blocks, &indices)?;
    let mut out = apply_causal_block_mask(raw);
    let allowed = BlockMask::causal_aligned(out.rows, out.cols).count();
    out.macs = (allowed * blocks.heads() * sample_count * blocks.dim()) as u64;
    Ok(out)
}

/// Sets entries with `j > self_index(i)` to `−∞`.
pub fn apply_causal_block_mask(mut affinity: BlockAffinity) -> BlockAffinity {
    let cols = affinity.cols;
    for i in 0..affinity.rows {
        let limit = affinity.self_index(i);
        for j in (limit + 1)..cols {
            affinity.scores[i * cols + j] = f64::NEG_INFINITY;
        }
    }
    affinity
}

/// Sets entries where `allowed` is false to `−∞`.
pub fn apply_block_mask(mut affinity: BlockAffinity, allowed: &BlockMask) -> Result<BlockAffinity> {
    allowed.check_shape(affinity.rows, affinity.cols, "affinity mask")?;
    for i in 0..affinity.rows {
        for j in 0..affinity.cols {
            if !allowed.get(i, j) {
                affinity.scores[i * affinity.cols + j] = f64::NEG_INFINITY;
            }
        }
    }
    Ok(affinity)
}
