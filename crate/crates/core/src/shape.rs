use crate::error::{Error, Result};

/// Tensor shape: ordered positive extents, rank >= 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::shape("rank must be at least 1"));
        }
        let mut numel: usize = 1;
        for &d in dims {
            if d == 0 {
                return Err(Error::shape(format!("zero extent in shape {dims:?}")));
            }
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::shape(format!("element count overflows for {dims:?}")))?;
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    /// Extent along `axis`, checking bounds.
    pub fn extent(&self, axis: usize) -> Result<usize> {
        self.0.get(axis).copied().ok_or_else(|| {
            Error::argument(format!("axis {axis} out of range for rank {}", self.rank()))
        })
    }

    /// The four extents of an (N,C,H,W) tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "expected rank-4 tensor, got rank {}",
                self.rank()
            )));
        }
        Ok((self.0[0], self.0[1], self.0[2], self.0[3]))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "expected rank-2 tensor, got rank {}",
                self.rank()
            )));
        }
        Ok((self.0[0], self.0[1]))
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

/// True when `order` is a permutation of `0..rank`.
pub fn is_permutation(order: &[usize], rank: usize) -> bool {
    if order.len() != rank {
        return false;
    }
    let mut seen = vec![false; rank];
    for &o in order {
        if o >= rank || seen[o] {
            return false;
        }
        seen[o] = true;
    }
    true
}

/// Inverse of a permutation: `inv[order[i]] = i`.
pub fn invert_permutation(order: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; order.len()];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    inv
}
