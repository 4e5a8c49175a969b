use crate::attention::se::SeBlock;
use crate::attention::ta::{BranchRole, TaBranch};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::mix_seed;
use crate::tensor::Tensor;

/// How SE excitation combines with the triplet branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripSeVariant {
    /// Plain triplet attention followed by one SE block on the unified output.
    One,
    /// SE on each rotated tensor first, then the usual branch gating.
    Two,
    /// SE gate applied in parallel with the branch gate on each rotated tensor.
    Three,
    /// Branch logits and SE excitation fused into one 3-D sigmoid gate,
    /// then a unification SE block.
    Four,
}

impl TripSeVariant {
    pub fn label(self) -> &'static str {
        match self {
            TripSeVariant::One => "tripse1",
            TripSeVariant::Two => "tripse2",
            TripSeVariant::Three => "tripse3",
            TripSeVariant::Four => "tripse4",
        }
    }

    fn has_branch_se(self) -> bool {
        !matches!(self, TripSeVariant::One)
    }

    fn has_unify_se(self) -> bool {
        matches!(self, TripSeVariant::One | TripSeVariant::Four)
    }
}

/// Triplet attention fused with squeeze-and-excitation. The spatial extents
/// are fixed at construction because the width- and height-branch SE layers
/// are sized to those extents (rotational channels).
pub struct TripSeBlock<E: Element> {
    variant: TripSeVariant,
    declared: (usize, usize, usize),
    branches: [TaBranch<E>; 3],
    branch_se: Option<[SeBlock<E>; 3]>,
    unify_se: Option<SeBlock<E>>,
}

impl<E: Element> TripSeBlock<E> {
    /// `declared` is the expected (C,H,W) of every input batch.
    pub fn new(
        variant: TripSeVariant,
        declared: (usize, usize, usize),
        reduction: usize,
        kernel: usize,
        seed: u64,
    ) -> Result<TripSeBlock<E>> {
        let (c, h, w) = declared;
        let branches = [
            TaBranch::new(BranchRole::Channel, kernel, mix_seed(seed, 0))?,
            TaBranch::new(BranchRole::Width, kernel, mix_seed(seed, 1))?,
            TaBranch::new(BranchRole::Height, kernel, mix_seed(seed, 2))?,
        ];
        let branch_se = if variant.has_branch_se() {
            Some([
                SeBlock::new(BranchRole::Channel.rotational_channels(c, h, w), reduction, mix_seed(seed, 10))?,
                SeBlock::new(BranchRole::Width.rotational_channels(c, h, w), reduction, mix_seed(seed, 11))?,
                SeBlock::new(BranchRole::Height.rotational_channels(c, h, w), reduction, mix_seed(seed, 12))?,
            ])
        } else {
            None
        };
        let unify_se = if variant.has_unify_se() {
            Some(SeBlock::new(c, reduction, mix_seed(seed, 20))?)
        } else {
            None
        };
        Ok(TripSeBlock {
            variant,
            declared,
            branches,
            branch_se,
            unify_se,
        })
    }

    pub fn variant(&self) -> TripSeVariant {
        self.variant
    }

    pub fn declared_input(&self) -> (usize, usize, usize) {
        self.declared
    }

    pub fn branches(&self) -> &[TaBranch<E>; 3] {
        &self.branches
    }

    pub fn branch_se(&self) -> Option<&[SeBlock<E>; 3]> {
        self.branch_se.as_ref()
    }

    pub fn unify_se(&self) -> Option<&SeBlock<E>> {
        self.unify_se.as_ref()
    }

    fn check_input(&self, x: &Tensor<E>) -> Result<()> {
        let (_, c, h, w) = x.shape().dims4()?;
        if (c, h, w) != self.declared {
            return Err(Error::shape(format!(
                "block constructed for (C,H,W) = {:?} applied to {}",
                self.declared,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        self.check_input(x)?;
        match self.variant {
            TripSeVariant::One => {
                let y = self.branch_mean(x, training, |_, _, rotated| Ok(rotated.clone()))?;
                Ok(self.unify_se.as_ref().expect("TripSE1 has a unify SE").forward(&y)?.0)
            }
            TripSeVariant::Two => {
                // SE first, then the branch gate is computed from and
                // applied to the channel-weighted tensor.
                self.branch_mean(x, training, |i, se, rotated| {
                    let (weighted, _) = se.expect("TripSE2 has branch SEs")[i].forward(rotated)?;
                    Ok(weighted)
                })
            }
            TripSeVariant::Three => {
                // Branch gate on the rotated tensor as usual; the SE gate
                // vector scales the gated result in parallel.
                let mut acc: Option<Tensor<E>> = None;
                for (i, branch) in self.branches.iter().enumerate() {
                    let perm = branch.role.perm();
                    let rotated = x.permute(&perm)?;
                    let gate = branch.gate(&rotated, training)?;
                    let se = &self.branch_se.as_ref().expect("TripSE3 has branch SEs")[i];
                    let vec_gate = se.gate(&rotated)?;
                    let (n, d, _, _) = rotated.shape().dims4()?;
                    let out = rotated
                        .mul(&gate)?
                        .mul(&vec_gate.reshape(&[n, d, 1, 1])?)?
                        .permute(&perm)?;
                    acc = Some(match acc {
                        None => out,
                        Some(a) => a.add(&out)?,
                    });
                }
                acc.expect("three branches").div_scalar(3.0)
            }
            TripSeVariant::Four => {
                let mut acc: Option<Tensor<E>> = None;
                for (i, branch) in self.branches.iter().enumerate() {
                    let perm = branch.role.perm();
                    let rotated = x.permute(&perm)?;
                    let plane = branch.pre_gate(&rotated, training)?;
                    let se = &self.branch_se.as_ref().expect("TripSE4 has branch SEs")[i];
                    let shift = se.excitation(&rotated)?;
                    let dims = rotated.shape().dims();
                    let (n, d) = (dims[0], dims[1]);
                    let gate3d = plane
                        .broadcast_to(dims)?
                        .add(&shift.reshape(&[n, d, 1, 1])?)?
                        .sigmoid()?;
                    let out = rotated.mul(&gate3d)?.permute(&perm)?;
                    acc = Some(match acc {
                        None => out,
                        Some(a) => a.add(&out)?,
                    });
                }
                let y = acc.expect("three branches").div_scalar(3.0)?;
                Ok(self.unify_se.as_ref().expect("TripSE4 has a unify SE").forward(&y)?.0)
            }
        }
    }

    /// Shared skeleton for variants whose branches follow
    /// rotate -> prepare -> gate -> scale -> rotate back, averaged.
    fn branch_mean(
        &self,
        x: &Tensor<E>,
        training: bool,
        prepare: impl Fn(usize, Option<&[SeBlock<E>; 3]>, &Tensor<E>) -> Result<Tensor<E>>,
    ) -> Result<Tensor<E>> {
        let mut acc: Option<Tensor<E>> = None;
        for (i, branch) in self.branches.iter().enumerate() {
            let perm = branch.role.perm();
            let rotated = x.permute(&perm)?;
            let prepared = prepare(i, self.branch_se.as_ref(), &rotated)?;
            let gate = branch.gate(&prepared, training)?;
            let out = prepared.mul(&gate)?.permute(&perm)?;
            acc = Some(match acc {
                None => out,
                Some(a) => a.add(&out)?,
            });
        }
        acc.expect("three branches").div_scalar(3.0)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for b in &self.branches {
            b.params(&format!("{prefix}.branch_{}", b.role.label()), out);
        }
        if let Some(ses) = &self.branch_se {
            for (se, b) in ses.iter().zip(&self.branches) {
                se.params(&format!("{prefix}.se_{}", b.role.label()), out);
            }
        }
        if let Some(se) = &self.unify_se {
            se.params(&format!("{prefix}.se_unify"), out);
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for b in &self.branches {
            b.buffers(&format!("{prefix}.branch_{}", b.role.label()), out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(TaBranch::param_count).sum::<usize>()
            + self
                .branch_se
                .as_ref()
                .map_or(0, |ses| ses.iter().map(SeBlock::param_count).sum())
            + self.unify_se.as_ref().map_or(0, SeBlock::param_count)
    }
}
