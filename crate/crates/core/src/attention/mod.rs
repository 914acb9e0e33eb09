//! Frame-aligned block-sparse attention.
//!
//! Tokens are grouped into blocks of `block_size` tokens, one block per latent
//! frame. Block-level relevance is estimated from a shared random subset of
//! within-block positions, the top-k past blocks are selected per query block,
//! and attention is evaluated only over the selected blocks.
//!
//! Query and key sequences may differ in length (streaming: one query block
//! against a cache). Block masks are then aligned to the bottom-right corner:
//! query block `r` corresponds to key block `r + (cols - rows)`, its "self" block.

mod affinity;
mod dense;
mod heatmap;
mod mask;
mod select;
mod sparse;

pub use affinity::{
    apply_block_mask, apply_causal_block_mask, block_affinity_from_indices, estimate_block_affinity,
    sample_block_indices, BlockAffinity,
};
pub use dense::{dense_attention, dense_attention_backward};
pub use heatmap::{export_affinity_heatmap, parse_heatmap_csv, write_heatmap_csv, HeatmapTable};
pub use mask::{AttentionMask, BlockMask};
pub use select::{
    counterfactual_mask, select_recent, sliding_window_selection, topk_select, BlockSelection, SelectionStrategy,
};
pub use sparse::{sparse_attention, sparse_attention_backward};

use crate::tensor::TokenTensor;
use crate::{Error, Real, Result};

/// Q/K/V token sequences partitioned into frame-aligned blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBlockSet<T> {
    pub q: TokenTensor<T>,
    pub k: TokenTensor<T>,
    pub v: TokenTensor<T>,
    pub block_size: usize,
}

impl<T: Real> TokenBlockSet<T> {
    pub fn new(q: TokenTensor<T>, k: TokenTensor<T>, v: TokenTensor<T>, block_size: usize) -> Result<Self> {
        check_qkv(&q, &k, &v)?;
        if block_size == 0 {
            return Err(Error::Parameter("block size must be positive".into()));
        }
        for (name, len) in [("query", q.len()), ("key", k.len())] {
            if len % block_size != 0 {
                return Err(Error::Dimension(format!(
                    "{name} length {len} is not a multiple of block size {block_size}"
                )));
            }
        }
        if k.len() < q.len() {
            return Err(Error::Dimension(format!(
                "{} keys cannot cover {} queries",
                k.len(),
                q.len()
            )));
        }
        Ok(Self { q, k, v, block_size })
    }

    pub fn query_blocks(&self) -> usize {
        self.q.len() / self.block_size
    }

    pub fn key_blocks(&self) -> usize {
        self.k.len() / self.block_size
    }

    pub fn heads(&self) -> usize {
        self.q.heads()
    }

    pub fn dim(&self) -> usize {
        self.q.dim()
    }
}

/// Attention result with the rows that had no admissible key.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput<T> {
    pub out: TokenTensor<T>,
    /// `true` where every key was masked; the output row is then zero.
    pub empty_rows: Vec<bool>,
    /// Multiply-accumulates spent on scores and value aggregation.
    pub macs: u64,
}

/// Gradients of a scalar loss w.r.t. the attention inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub dq: TokenTensor<T>,
    pub dk: TokenTensor<T>,
    pub dv: TokenTensor<T>,
}

pub(crate) fn check_qkv<T: Real>(q: &TokenTensor<T>, k: &TokenTensor<T>, v: &TokenTensor<T>) -> Result<()> {
    q.check_same_layout(k, "query/key")?;
    q.check_same_layout(v, "query/value")?;
    if k.len() != v.len() {
        return Err(Error::Dimension(format!("{} keys but {} values", k.len(), v.len())));
    }
    if q.dim() == 0 {
        return Err(Error::Dimension("head dimension must be positive".into()));
    }
    Ok(())
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
