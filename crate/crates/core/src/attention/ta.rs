use crate::attention::zpool::zpool;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::{BatchNorm2d, Conv2d};
use crate::rng::mix_seed;
use crate::tensor::Tensor;

/// Axis a branch attends over. Each role carries a fixed axis rotation that
/// brings its target dimension into the channel slot; all three rotations
/// are involutions, so the same order rotates back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchRole {
    Channel,
    Width,
    Height,
}

impl BranchRole {
    /// (N,C,H,W) -> Channel: identity; Width: (N,W,H,C); Height: (N,H,C,W).
    pub fn perm(self) -> [usize; 4] {
        match self {
            BranchRole::Channel => [0, 1, 2, 3],
            BranchRole::Width => [0, 3, 2, 1],
            BranchRole::Height => [0, 2, 1, 3],
        }
    }

    /// Extent that becomes the rotational channel count for a declared
    /// (C,H,W) input.
    pub fn rotational_channels(self, c: usize, h: usize, w: usize) -> usize {
        match self {
            BranchRole::Channel => c,
            BranchRole::Width => w,
            BranchRole::Height => h,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BranchRole::Channel => "c",
            BranchRole::Width => "w",
            BranchRole::Height => "h",
        }
    }
}

/// One branch of triplet attention: rotate, Z-pool, convolve 2 -> 1 with
/// batch norm, sigmoid into a single-channel gate over the rotated plane,
/// scale, rotate back.
pub struct TaBranch<E: Element> {
    pub role: BranchRole,
    conv: Conv2d<E>,
    bn: BatchNorm2d<E>,
}

impl<E: Element> TaBranch<E> {
    pub fn new(role: BranchRole, kernel: usize, seed: u64) -> Result<TaBranch<E>> {
        if kernel % 2 == 0 {
            return Err(Error::argument(format!(
                "gate kernel must be odd so padding preserves the plane, got {kernel}"
            )));
        }
        Ok(TaBranch {
            role,
            conv: Conv2d::seeded(2, 1, kernel, 1, (kernel - 1) / 2, false, mix_seed(seed, 0))?,
            bn: BatchNorm2d::new(1)?,
        })
    }

    /// Gate logits over the rotated plane: bn(conv(zpool(x'))), shape (N,1,A,B).
    pub fn pre_gate(&self, rotated: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        self.bn.forward(&self.conv.forward(&zpool(rotated)?)?, training)
    }

    /// Sigmoid gate in (0,1) over the rotated plane.
    pub fn gate(&self, rotated: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        self.pre_gate(rotated, training)?.sigmoid()
    }

    /// Returns (gated tensor in original orientation, the 2-D gate map).
    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<(Tensor<E>, Tensor<E>)> {
        let perm = self.role.perm();
        let rotated = x.permute(&perm)?;
        let map2d = self.gate(&rotated, training)?;
        let out = rotated.mul(&map2d)?.permute(&perm)?;
        Ok((out, map2d))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.conv.params(&format!("{prefix}.conv"), out);
        self.bn.params(&format!("{prefix}.bn"), out);
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.bn.buffers(&format!("{prefix}.bn"), out);
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    /// Testing affordance: zeros the gate conv and saturates the BN shift
    /// so the gate is exactly 1 and the branch passes input through bitwise.
    pub fn force_gate_open(&self) {
        self.conv.weight.with_data_mut(|w| w.fill(E::ZERO));
        self.bn.beta.with_data_mut(|b| b.fill(E::from_f64(40.0)));
    }

    /// Testing affordance: zeros only the gate conv, leaving batch norm in
    /// place, so with identity-initialized BN the pre-gate plane is 0.
    pub fn zero_gate_conv(&self) {
        self.conv.weight.with_data_mut(|w| w.fill(E::ZERO));
    }
}

/// Full triplet attention: the mean of the channel-, width-, and
/// height-branch outputs.
pub struct TripletAttention<E: Element> {
    branches: [TaBranch<E>; 3],
}

impl<E: Element> TripletAttention<E> {
    pub fn new(kernel: usize, seed: u64) -> Result<TripletAttention<E>> {
        Ok(TripletAttention {
            branches: [
                TaBranch::new(BranchRole::Channel, kernel, mix_seed(seed, 0))?,
                TaBranch::new(BranchRole::Width, kernel, mix_seed(seed, 1))?,
                TaBranch::new(BranchRole::Height, kernel, mix_seed(seed, 2))?,
            ],
        })
    }

    pub fn branches(&self) -> &[TaBranch<E>; 3] {
        &self.branches
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let (b0, _) = self.branches[0].forward(x, training)?;
        let (b1, _) = self.branches[1].forward(x, training)?;
        let (b2, _) = self.branches[2].forward(x, training)?;
        b0.add(&b1)?.add(&b2)?.div_scalar(3.0)
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for b in &self.branches {
            b.params(&format!("{prefix}.branch_{}", b.role.label()), out);
        }
    }

    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        for b in &self.branches {
            b.buffers(&format!("{prefix}.branch_{}", b.role.label()), out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(TaBranch::param_count).sum()
    }

    /// Testing affordance: saturates all three branch gates to 1.
    pub fn force_gates_open(&self) {
        for b in &self.branches {
            b.force_gate_open();
        }
    }
}
