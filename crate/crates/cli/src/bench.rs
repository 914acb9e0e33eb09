use std::time::Instant;

use serde::Serialize;
use viewrope::attention::{
    dense_attention, estimate_block_affinity, sparse_attention, topk_select, AttentionMask, BlockMask,
};

use crate::attend::random_instance;
use crate::config::{AttendConfig, BenchConfig};
use crate::error::{CliError, CliResult};
use crate::output::{write_file, Output};

pub const CSV_HEADER: &str = "frames,k,block_size,heads,dim,dense_macs,sparse_macs,dense_macs_analytic,\
sparse_macs_analytic,affinity_macs,dense_ms,sparse_ms,ratio";

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub frames: usize,
    pub k: usize,
    pub block_size: usize,
    pub heads: usize,
    pub dim: usize,
    pub dense_macs: u64,
    pub sparse_macs: u64,
    pub dense_macs_analytic: u64,
    pub sparse_macs_analytic: u64,
    pub affinity_macs: u64,
    pub dense_ms: f64,
    pub sparse_ms: f64,
    pub ratio: f64,
}

impl BenchRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.4}",
            self.frames,
            self.k,
            self.block_size,
            self.heads,
            self.dim,
            self.dense_macs,
            self.sparse_macs,
            self.dense_macs_analytic,
            self.sparse_macs_analytic,
            self.affinity_macs,
            self.dense_ms,
            self.sparse_ms,
            self.ratio
        )
    }
}

/// Causal block attention over `n` frames: `n(n+1)/2` tiles.
pub fn dense_tiles(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Top-k plus self: frame `i` reads `min(i, k) + 1` tiles.
pub fn sparse_tiles(n: usize, k: usize) -> usize {
    if n <= k {
        dense_tiles(n)
    } else {
        (k + 1) * n - k * (k + 1) / 2
    }
}

fn best_of<T>(repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        last = Some(v);
    }
    Ok((last.expect("at least one repeat"), best))
}

pub fn bench_row(c: &BenchConfig, frames: usize) -> CliResult<BenchRow> {
    let inst = AttendConfig {
        blocks: frames,
        block_size: c.block_size,
        heads: c.heads,
        dim: c.dim,
        seed: c.seed ^ frames as u64,
        ..AttendConfig::default()
    };
    let blocks = random_instance(&inst)?;
    let causal = BlockMask::causal(frames);
    let mask = AttentionMask::Blocks {
        mask: &causal,
        block_size: c.block_size,
    };
    let (dense, dense_ms) = best_of(c.repeats, || Ok(dense_attention(&blocks.q, &blocks.k, &blocks.v, mask)?))?;
    let sample_count = c.sample_count.min(c.block_size);
    let ((sparse, affinity_macs), sparse_ms) = best_of(c.repeats, || {
        let aff = estimate_block_affinity(&blocks, sample_count, c.seed)?;
        let sel = topk_select(&aff, c.k)?;
        Ok((sparse_attention(&blocks, &sel.mask)?, aff.macs))
    })?;
    let tile = (c.block_size * c.block_size * c.heads * 2 * c.dim) as u64;
    Ok(BenchRow {
        frames,
        k: c.k,
        block_size: c.block_size,
        heads: c.heads,
        dim: c.dim,
        dense_macs: dense.macs,
        sparse_macs: sparse.macs,
        dense_macs_analytic: dense_tiles(frames) as u64 * tile,
        sparse_macs_analytic: sparse_tiles(frames, c.k) as u64 * tile,
        affinity_macs,
        dense_ms,
        sparse_ms,
        ratio: sparse_ms / dense_ms,
    })
}

pub fn run(c: &BenchConfig, out: &Output) -> CliResult<()> {
    if c.frames.is_empty() || c.frames.contains(&0) {
        return Err(CliError::Config("bench needs positive frame counts".into()));
    }
    let rows = c
        .frames
        .iter()
        .map(|&n| bench_row(c, n))
        .collect::<CliResult<Vec<_>>>()?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv());
        csv.push('\n');
    }
    if let Some(path) = &c.output {
        write_file(path, &csv)?;
    }
    out.emit(csv.trim_end(), &rows);
    Ok(())
}
