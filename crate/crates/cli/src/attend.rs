use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use viewrope::attention::{
    dense_attention, estimate_block_affinity, export_affinity_heatmap, sliding_window_selection, sparse_attention,
    topk_select, write_heatmap_csv, AttentionMask, BlockMask, TokenBlockSet,
};
use viewrope::TokenTensor;

use crate::config::{AttendConfig, AttendMode};
use crate::error::{CliError, CliResult};
use crate::output::{write_json, Output};

/// Query, key and value tensors, each flat `[tokens × heads × dim]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorFile {
    pub block_size: usize,
    pub heads: usize,
    pub dim: usize,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct OutputFile<'a> {
    tokens: usize,
    heads: usize,
    dim: usize,
    out: &'a [f64],
}

#[derive(Debug, Serialize)]
struct Summary {
    mode: AttendMode,
    query_blocks: usize,
    key_blocks: usize,
    block_size: usize,
    heads: usize,
    dim: usize,
    selected: Vec<Vec<usize>>,
    macs: u64,
    dense_macs: u64,
    max_abs_diff_vs_dense: f64,
}

fn tensor(data: Vec<f64>, heads: usize, dim: usize, name: &str) -> CliResult<TokenTensor<f64>> {
    let width = heads * dim;
    if width == 0 || !data.len().is_multiple_of(width) {
        return Err(CliError::Config(format!(
            "`{name}` has {} values, not a multiple of heads*dim = {width}",
            data.len()
        )));
    }
    Ok(TokenTensor::from_vec(data.clone(), data.len() / width, heads, dim)?)
}

fn load_input(path: &Path) -> CliResult<TokenBlockSet<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let f: TensorFile = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let q = tensor(f.q, f.heads, f.dim, "q")?;
    let k = tensor(f.k, f.heads, f.dim, "k")?;
    let v = tensor(f.v, f.heads, f.dim, "v")?;
    Ok(TokenBlockSet::new(q, k, v, f.block_size)?)
}

pub fn random_instance(c: &AttendConfig) -> CliResult<TokenBlockSet<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let len = c.blocks * c.block_size;
    let mut gen = || TokenTensor::from_fn(len, c.heads, c.dim, |_, _, _| rng.random_range(-1.0..1.0));
    let (q, k, v) = (gen(), gen(), gen());
    Ok(TokenBlockSet::new(q, k, v, c.block_size)?)
}

pub fn run(c: &AttendConfig, out: &Output) -> CliResult<()> {
    let blocks = match &c.input {
        Some(path) => load_input(path)?,
        None => random_instance(c)?,
    };
    let (rows, cols, b) = (blocks.query_blocks(), blocks.key_blocks(), blocks.block_size);
    let sample_count = c.sample_count.min(b);
    let affinity = estimate_block_affinity(&blocks, sample_count, c.seed)?;
    let causal = BlockMask::causal_aligned(rows, cols);
    let dense_mask = AttentionMask::Blocks {
        mask: &causal,
        block_size: b,
    };
    let reference = dense_attention(&blocks.q, &blocks.k, &blocks.v, dense_mask)?;
    let (mask, result) = match c.mode {
        AttendMode::Dense => (causal.clone(), reference.clone()),
        AttendMode::Sparse => {
            let mask = topk_select(&affinity, c.k)?.mask;
            let r = sparse_attention(&blocks, &mask)?;
            (mask, r)
        }
        AttendMode::Sliding => {
            let mask = sliding_window_selection(rows, cols, c.window)?.mask;
            let r = sparse_attention(&blocks, &mask)?;
            (mask, r)
        }
    };
    let diff = result.out.max_abs_diff(&reference.out);

    if let Some(path) = &c.heatmap {
        write_heatmap_csv(&export_affinity_heatmap(&affinity, &mask)?, path)?;
    }
    if let Some(path) = &c.output {
        let (tokens, heads, dim) = result.out.shape();
        write_json(
            path,
            &OutputFile {
                tokens,
                heads,
                dim,
                out: result.out.as_slice(),
            },
        )?;
    }

    let selected: Vec<Vec<usize>> = (0..rows).map(|i| mask.row_indices(i)).collect();
    let mut text = format!(
        "mode {:?}: {rows}x{cols} blocks of {b} tokens, {} heads, dim {}\n",
        c.mode,
        blocks.heads(),
        blocks.dim()
    )
    .to_lowercase();
    for (i, s) in selected.iter().enumerate() {
        let _ = writeln!(text, "  query block {i}: {s:?}");
    }
    let _ = writeln!(text, "macs {} (dense {})", result.macs, reference.macs);
    let _ = write!(text, "max abs diff vs dense: {diff:.3e}");
    let summary = Summary {
        mode: c.mode,
        query_blocks: rows,
        key_blocks: cols,
        block_size: b,
        heads: blocks.heads(),
        dim: blocks.dim(),
        selected,
        macs: result.macs,
        dense_macs: reference.macs,
        max_abs_diff_vs_dense: diff,
    };
    out.emit(text, &summary);
    Ok(())
}
