//! Attention blocks: squeeze-and-excitation, triplet attention, and the
//! four TripSE combinations of the two. Every block maps (N,C,H,W) to the
//! same shape by multiplying the input with sigmoid gates.

mod se;
mod ta;
mod tripse;
mod zpool;

pub use se::SeBlock;
pub use ta::{BranchRole, TaBranch, TripletAttention};
pub use tripse::{TripSeBlock, TripSeVariant};
pub use zpool::zpool;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Block variant selector, paired with the reduction ratio and gate kernel
/// size in run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    None,
    Se,
    Ta,
    TripSe1,
    TripSe2,
    TripSe3,
    TripSe4,
}

impl AttentionKind {
    pub const ALL: [AttentionKind; 7] = [
        AttentionKind::None,
        AttentionKind::Se,
        AttentionKind::Ta,
        AttentionKind::TripSe1,
        AttentionKind::TripSe2,
        AttentionKind::TripSe3,
        AttentionKind::TripSe4,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Se => "se",
            AttentionKind::Ta => "ta",
            AttentionKind::TripSe1 => "tripse1",
            AttentionKind::TripSe2 => "tripse2",
            AttentionKind::TripSe3 => "tripse3",
            AttentionKind::TripSe4 => "tripse4",
        }
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<AttentionKind> {
        AttentionKind::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown attention kind \"{s}\" (expected one of none, se, ta, tripse1, tripse2, tripse3, tripse4)"
                ))
            })
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A constructed attention stage of any kind.
pub enum AttentionBlock<E: Element> {
    None,
    Se(SeBlock<E>),
    Ta(TripletAttention<E>),
    TripSe(TripSeBlock<E>),
}

impl<E: Element> AttentionBlock<E> {
    /// Builds a block for inputs of the declared (C,H,W).
    pub fn new(
        kind: AttentionKind,
        declared: (usize, usize, usize),
        reduction: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<AttentionBlock<E>> {
        let (c, _, _) = declared;
        Ok(match kind {
            AttentionKind::None => AttentionBlock::None,
            AttentionKind::Se => AttentionBlock::Se(SeBlock::new(c, reduction, seed)?),
            AttentionKind::Ta => AttentionBlock::Ta(TripletAttention::new(kernel, seed)?),
            AttentionKind::TripSe1 => AttentionBlock::TripSe(TripSeBlock::new(
                TripSeVariant::One,
                declared,
                reduction,
                kernel,
                seed,
            )?),
            AttentionKind::TripSe2 => AttentionBlock::TripSe(TripSeBlock::new(
                TripSeVariant::Two,
                declared,
                reduction,
                kernel,
                seed,
            )?),
            AttentionKind::TripSe3 => AttentionBlock::TripSe(TripSeBlock::new(
                TripSeVariant::Three,
                declared,
                reduction,
                kernel,
                seed,
            )?),
            AttentionKind::TripSe4 => AttentionBlock::TripSe(TripSeBlock::new(
                TripSeVariant::Four,
                declared,
                reduction,
                kernel,
                seed,
            )?),
        })
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionBlock::None => AttentionKind::None,
            AttentionBlock::Se(_) => AttentionKind::Se,
            AttentionBlock::Ta(_) => AttentionKind::Ta,
            AttentionBlock::TripSe(b) => match b.variant() {
                TripSeVariant::One => AttentionKind::TripSe1,
                TripSeVariant::Two => AttentionKind::TripSe2,
                TripSeVariant::Three => AttentionKind::TripSe3,
                TripSeVariant::Four => AttentionKind::TripSe4,
            },
        }
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        match self {
            AttentionBlock::None => Ok(x.clone()),
            AttentionBlock::Se(se) => Ok(se.forward(x)?.0),
            AttentionBlock::Ta(ta) => ta.forward(x, training),
            AttentionBlock::TripSe(b) => b.forward(x, training),
        }
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        match self {
            AttentionBlock::None => {}
            AttentionBlock::Se(se) => se.params(prefix, out),
            AttentionBlock::Ta(ta) => ta.params(prefix, out),
            AttentionBlock::TripSe(b) => b.params(prefix, out),
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        match self {
            AttentionBlock::None | AttentionBlock::Se(_) => {}
            AttentionBlock::Ta(ta) => ta.buffers(prefix, out),
            AttentionBlock::TripSe(b) => b.buffers(prefix, out),
        }
    }

    /// Count of trainable scalars; BN running statistics excluded.
    pub fn param_count(&self) -> usize {
        match self {
            AttentionBlock::None => 0,
            AttentionBlock::Se(se) => se.param_count(),
            AttentionBlock::Ta(ta) => ta.param_count(),
            AttentionBlock::TripSe(b) => b.param_count(),
        }
    }
}
