use crate::{Error, Real, Result};

/// Dense `[len × heads × dim]` token array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTensor<T> {
    data: Vec<T>,
    len: usize,
    heads: usize,
    dim: usize,
}

impl<T: Real> TokenTensor<T> {
    pub fn zeros(len: usize, heads: usize, dim: usize) -> Self {
        Self {
            data: vec![T::zero(); len * heads * dim],
            len,
            heads,
            dim,
        }
    }

    pub fn from_vec(data: Vec<T>, len: usize, heads: usize, dim: usize) -> Result<Self> {
        if data.len() != len * heads * dim {
            return Err(Error::Dimension(format!(
                "buffer of {} values does not match [{len} x {heads} x {dim}]",
                data.len()
            )));
        }
        Ok(Self {
            data,
            len,
            heads,
            dim,
        })
    }

    pub fn from_fn(len: usize, heads: usize, dim: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(len * heads * dim);
        for l in 0..len {
            for h in 0..heads {
                for c in 0..dim {
                    data.push(f(l, h, c));
                }
            }
        }
        Self { data, len, heads, dim }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.len, self.heads, self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The `dim`-vector of token `l`, head `h`.
    #[inline]
    pub fn vector(&self, l: usize, h: usize) -> &[T] {
        let o = (l * self.heads + h) * self.dim;
        &self.data[o..o + self.dim]
    }

    #[inline]
    pub fn vector_mut(&mut self, l: usize, h: usize) -> &mut [T] {
        let o = (l * self.heads + h) * self.dim;
        &mut self.data[o..o + self.dim]
    }

    /// All heads of token `l`, contiguous.
    #[inline]
    pub fn token(&self, l: usize) -> &[T] {
        let w = self.heads * self.dim;
        &self.data[l * w..(l + 1) * w]
    }

    #[inline]
    pub fn token_mut(&mut self, l: usize) -> &mut [T] {
        let w = self.heads * self.dim;
        &mut self.data[l * w..(l + 1) * w]
    }

    /// Copy of tokens `[start, end)`.
    pub fn slice_tokens(&self, start: usize, end: usize) -> Self {
        let w = self.heads * self.dim;
        Self {
            data: self.data[start * w..end * w].to_vec(),
            len: end - start,
            heads: self.heads,
            dim: self.dim,
        }
    }

    /// Concatenates along the token axis.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("cannot concatenate zero tensors".into()))?;
        let (heads, dim) = (first.heads, first.dim);
        let mut data = Vec::new();
        let mut len = 0;
        for p in parts {
            if p.heads != heads || p.dim != dim {
                return Err(Error::Dimension("head layout differs between tensors".into()));
            }
            data.extend_from_slice(&p.data);
            len += p.len;
        }
        Ok(Self { data, len, heads, dim })
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> TokenTensor<U> {
        TokenTensor {
            data: self.data.iter().map(|&x| f(x)).collect(),
            len: self.len,
            heads: self.heads,
            dim: self.dim,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn check_same_layout(&self, other: &Self, what: &str) -> Result<()> {
        if self.heads != other.heads || self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "{what}: [{} x {}] vs [{} x {}] heads/dim",
                self.heads, self.dim, other.heads, other.dim
            )));
        }
        Ok(())
    }
}
