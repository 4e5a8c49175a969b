//! Primitive differentiable kernels. Pure tensor transforms are methods on
//! [`Tensor`](crate::Tensor); parameterized layers ([`Conv2d`], [`BatchNorm2d`],
//! [`Linear`]) are structs with a `forward` method.

mod conv;
mod elementwise;
mod linear;
mod movement;
mod norm;
mod reduce;

pub use conv::Conv2d;
pub use elementwise::EwKind;
pub use linear::Linear;
pub use norm::BatchNorm2d;
pub use reduce::ReduceMode;

/// Splits a shape at `axis` into (elements before, extent of axis,
/// elements after) for strided reductions.
pub(crate) fn axis_split(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    (outer, dims[axis], inner)
}
