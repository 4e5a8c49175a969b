use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::Linear;
use crate::rng::mix_seed;
use crate::tensor::Tensor;

/// Squeeze-and-excitation: global average pool to a channel descriptor, a
/// two-layer bottleneck (C -> mid -> C with mid = max(1, floor(C/r))), and a
/// sigmoid gate that rescales every channel.
pub struct SeBlock<E: Element> {
    fc1: Linear<E>,
    fc2: Linear<E>,
    channels: usize,
    reduction: usize,
}

impl<E: Element> SeBlock<E> {
    pub fn new(channels: usize, reduction: usize, seed: u64) -> Result<SeBlock<E>> {
        if channels == 0 || reduction == 0 {
            return Err(Error::argument(
                "SE channels and reduction must be positive",
            ));
        }
        let mid = Self::mid_width(channels, reduction);
        Ok(SeBlock {
            fc1: Linear::seeded(channels, mid, mix_seed(seed, 1))?,
            fc2: Linear::seeded(mid, channels, mix_seed(seed, 2))?,
            channels,
            reduction,
        })
    }

    pub fn mid_width(channels: usize, reduction: usize) -> usize {
        (channels / reduction).max(1)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn reduction(&self) -> usize {
        self.reduction
    }

    /// Bottleneck output before the gate sigmoid: fc2(relu(fc1(gap(x)))),
    /// shape (N,C).
    pub fn excitation(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (_, c, _, _) = x.shape().dims4()?;
        if c != self.channels {
            return Err(Error::shape(format!(
                "SE block over {} channels applied to {}",
                self.channels,
                x.shape()
            )));
        }
        self.fc2.forward(&self.fc1.forward(&x.global_avg_pool()?)?.relu()?)
    }

    /// Per-channel gate in (0,1), shape (N,C).
    pub fn gate(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        self.excitation(x)?.sigmoid()
    }

    /// Returns (x scaled by the gate, the gate itself).
    pub fn forward(&self, x: &Tensor<E>) -> Result<(Tensor<E>, Tensor<E>)> {
        let gate = self.gate(x)?;
        let (n, c, _, _) = x.shape().dims4()?;
        let gated = x.mul(&gate.reshape(&[n, c, 1, 1])?)?;
        Ok((gated, gate))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        self.fc1.params(&format!("{prefix}.fc1"), out);
        self.fc2.params(&format!("{prefix}.fc2"), out);
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    /// Testing affordance: zeros the weights and sets the fc2 bias to +40,
    /// saturating the gate to exactly 1.
    pub fn force_gate_open(&self) {
        self.fc1.weight.with_data_mut(|w| w.fill(E::ZERO));
        self.fc1.bias.with_data_mut(|b| b.fill(E::ZERO));
        self.fc2.weight.with_data_mut(|w| w.fill(E::ZERO));
        self.fc2.bias.with_data_mut(|b| b.fill(E::from_f64(40.0)));
    }

    /// Testing affordance: zeros every parameter so the excitation is 0 and
    /// the gate is exactly 0.5.
    pub fn zero_excitation(&self) {
        self.fc1.weight.with_data_mut(|w| w.fill(E::ZERO));
        self.fc1.bias.with_data_mut(|b| b.fill(E::ZERO));
        self.fc2.weight.with_data_mut(|w| w.fill(E::ZERO));
        self.fc2.bias.with_data_mut(|b| b.fill(E::ZERO));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeroed_parameters_gate_at_half() {
        let se: SeBlock<f32> = SeBlock::new(4, 2, 0).unwrap();
        se.zero_excitation();
        let x: Tensor<f32> = Tensor::randn(&[2, 4, 3, 3], 0.0, 1.0, 1).unwrap();
        let (gated, gate) = se.forward(&x).unwrap();
        assert!(gate.to_vec().iter().all(|&g| g == 0.5));
        for (a, b) in gated.to_vec().iter().zip(x.to_vec()) {
            assert_eq!(*a, 0.5 * b);
        }
    }

    #[test]
    fn saturated_gate_passes_input_through_bitwise() {
        let se: SeBlock<f32> = SeBlock::new(6, 16, 0).unwrap();
        se.force_gate_open();
        let x: Tensor<f32> = Tensor::randn(&[1, 6, 4, 4], 0.0, 1.0, 2).unwrap();
        let (gated, gate) = se.forward(&x).unwrap();
        assert!(gate.to_vec().iter().all(|&g| g == 1.0));
        assert!(gated
            .to_vec()
            .iter()
            .zip(x.to_vec())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mid_width_clamps_to_one() {
        assert_eq!(SeBlock::<f32>::mid_width(96, 16), 6);
        assert_eq!(SeBlock::<f32>::mid_width(7, 16), 1);
        assert_eq!(SeBlock::<f32>::mid_width(96, 1), 96);
    }

    #[test]
    fn param_count_formula() {
        // C*mid + mid + mid*C + C with C=96, mid=6.
        let se: SeBlock<f32> = SeBlock::new(96, 16, 0).unwrap();
        assert_eq!(se.param_count(), 96 * 6 + 6 + 6 * 96 + 96);
        assert_eq!(se.param_count(), 1254);
    }

    #[test]
    fn rejects_channel_mismatch() {
        let se: SeBlock<f32> = SeBlock::new(4, 2, 0).unwrap();
        let x: Tensor<f32> = Tensor::zeros(&[1, 5, 2, 2]).unwrap();
        assert!(se.forward(&x).is_err());
    }
}
