use crate::{Error, Result};

/// Boolean `rows × cols` matrix, row-major. Used for block masks and token masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl BlockMask {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![true; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.bits[i * cols + j] = f(i, j);
            }
        }
        m
    }

    /// Square causal mask: `j ≤ i`.
    pub fn causal(n: usize) -> Self {
        Self::causal_aligned(n, n)
    }

    /// Bottom-right aligned causal mask: `j ≤ i + (cols − rows)`.
    pub fn causal_aligned(rows: usize, cols: usize) -> Self {
        let off = cols.saturating_sub(rows);
        Self::from_fn(rows, cols, |i, j| j <= i + off)
    }

    /// Self block only.
    pub fn identity_aligned(rows: usize, cols: usize) -> Self {
        let off = cols.saturating_sub(rows);
        Self::from_fn(rows, cols, |i, j| j == i + off)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Key index treated as the query row's own block.
    pub fn self_index(&self, row: usize) -> usize {
        row + self.cols - self.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        self.bits[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.cols..(i + 1) * self.cols]
    }

    /// Indices of the set entries of row `i`, ascending.
    pub fn row_indices(&self, i: usize) -> Vec<usize> {
        self.row(i)
            .iter()
            .enumerate()
            .filter_map(|(j, &b)| b.then_some(j))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub(crate) fn check_shape(&self, rows: usize, cols: usize, what: &str) -> Result<()> {
        if self.rows != rows || self.cols != cols {
            return Err(Error::Dimension(format!(
                "{what}: mask is {}x{}, expected {rows}x{cols}",
                self.rows, self.cols
            )));
        }
        if cols < rows {
            return Err(Error::Dimension(format!("{what}: fewer key blocks than query blocks")));
        }
        Ok(())
    }
}

/// Mask granularity for [`dense_attention`](super::dense_attention).
#[derive(Debug, Clone, Copy)]
pub enum AttentionMask<'a> {
    /// Every key visible to every query.
    Full,
    /// Block mask expanded over `block_size × block_size` token tiles.
    Blocks { mask: &'a BlockMask, block_size: usize },
    /// Token-level mask `[queries × keys]`.
    Tokens(&'a BlockMask),
}

impl AttentionMask<'_> {
    pub(crate) fn check(&self, lq: usize, lk: usize) -> Result<()> {
        match *self {
            AttentionMask::Full => Ok(()),
            AttentionMask::Blocks { mask, block_size } => {
                if block_size == 0 || !lq.is_multiple_of(block_size) || !lk.is_multiple_of(block_size) {
                    return Err(Error::Dimension(format!(
                        "sequence lengths {lq}/{lk} not divisible by block size {block_size}"
                    )));
                }
                mask.check_shape(lq / block_size, lk / block_size, "block mask")
            }
            AttentionMask::Tokens(mask) => {
                if mask.rows() != lq || mask.cols() != lk {
                    return Err(Error::Dimension(format!(
                        "token mask is {}x{}, expected {lq}x{lk}",
                        mask.rows(),
                        mask.cols()
                    )));
                }
                Ok(())
            }
        }
    }

    #[inline]
    pub(crate) fn allows(&self, i: usize, j: usize) -> bool {
        match *self {
            AttentionMask::Full => true,
            AttentionMask::Blocks { mask, block_size } => mask.get(i / block_size, j / block_size),
            AttentionMask::Tokens(mask) => mask.get(i, j),
        }
    }
}
