use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BlockAffinity, BlockMask};
use crate::{Error, Result};

/// Chosen key blocks per query block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSelection {
    /// Chosen past blocks per row, best first. Never contains the self block.
    pub topk_sets: Vec<Vec<usize>>,
    /// Chosen blocks plus the self block.
    pub mask: BlockMask,
    /// Blocks that were eligible for selection (finite affinity, not self).
    pub candidates: BlockMask,
    pub k: usize,
}

impl BlockSelection {
    fn from_sets(topk_sets: Vec<Vec<usize>>, candidates: BlockMask, k: usize) -> Self {
        let mut mask = BlockMask::empty(candidates.rows(), candidates.cols());
        for (i, set) in topk_sets.iter().enumerate() {
            mask.set(i, mask.self_index(i), true);
            for &j in set {
                mask.set(i, j, true);
            }
        }
        Self {
            topk_sets,
            mask,
            candidates,
            k,
        }
    }
}

/// Picks the `k` highest finite affinities per row among non-self blocks.
/// Ties go to the larger block index.
pub fn topk_select(affinity: &BlockAffinity, k: usize) -> Result<BlockSelection> {
    if affinity.cols < affinity.rows {
        return Err(Error::Dimension("affinity has fewer key blocks than query blocks".into()));
    }
    let candidates = BlockMask::from_fn(affinity.rows, affinity.cols, |i, j| {
        j != affinity.self_index(i) && affinity.get(i, j).is_finite()
    });
    let sets = (0..affinity.rows)
        .map(|i| {
            let mut pool = candidates.row_indices(i);
            pool.sort_by(|&a, &b| {
                affinity
                    .get(i, b)
                    .total_cmp(&affinity.get(i, a))
                    .then(b.cmp(&a))
            });
            pool.truncate(k);
            pool
        })
        .collect();
    Ok(BlockSelection::from_sets(sets, candidates, k))
}

/// Ablation strategies that replace the top-k choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// `k` blocks uniformly from the eligible past.
    RandomSelection,
    /// `k` blocks uniformly from the eligible past minus the top-k choice.
    ExcludeSelected,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RandomSelection => "random",
            Self::ExcludeSelected => "exclude",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" | "random_selection" => Ok(Self::RandomSelection),
            "exclude" | "exclude_selected" => Ok(Self::ExcludeSelected),
            other => Err(Error::Config(format!("unknown selection strategy `{other}`"))),
        }
    }
}

/// Re-draws each row's chosen blocks according to `strategy`.
pub fn counterfactual_mask(
    selection: &BlockSelection,
    strategy: SelectionStrategy,
    k: usize,
    seed: u64,
) -> BlockSelection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets = selection
        .topk_sets
        .iter()
        .enumerate()
        .map(|(i, chosen)| {
            let pool: Vec<usize> = selection
                .candidates
                .row_indices(i)
                .into_iter()
                .filter(|j| strategy == SelectionStrategy::RandomSelection || !chosen.contains(j))
                .collect();
            let take = k.min(pool.len());
            let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|p| pool[p])
                .collect();
            picked.sort_unstable_by(|a, b| b.cmp(a));
            picked
        })
        .collect();
    BlockSelection::from_sets(sets, selection.candidates.clone(), k)
}

/// The `window` most recent past blocks per row, plus self.
pub fn sliding_window_selection(rows: usize, cols: usize, window: usize) -> Result<BlockSelection> {
    if cols < rows {
        return Err(Error::Dimension("fewer key blocks than query blocks".into()));
    }
    let candidates = BlockMask::from_fn(rows, cols, |i, j| j < i + cols - rows);
    Ok(select_recent(&candidates, window))
}

/// The `window` highest-index eligible blocks per row, plus self.
pub fn select_recent(candidates: &BlockMask, window: usize) -> BlockSelection {
    let sets = (0..candidates.rows())
        .map(|i| {
            let mut pool = candidates.row_indices(i);
            pool.retain(|&j| j != candidates.self_index(i));
            pool.reverse();
            pool.truncate(window);
            pool
        })
        .collect();
    BlockSelection::from_sets(sets, candidates.clone(), window)
}
