use crate::element::Element;
use crate::error::Result;
use crate::ops::ReduceMode;
use crate::tensor::Tensor;

/// Compresses axis 1 of an (N,D,A,B) tensor to two channels: max in
/// channel 0, mean in channel 1, giving (N,2,A,B).
pub fn zpool<E: Element>(x: &Tensor<E>) -> Result<Tensor<E>> {
    x.shape().dims4()?;
    let max = x.reduce_axis(1, ReduceMode::Max, true)?;
    let mean = x.reduce_axis(1, ReduceMode::Mean, true)?;
    Tensor::concat(&[max, mean], 1)
}
