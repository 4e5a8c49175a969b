use std::sync::Arc;

use crate::autodiff::{grad_enabled, Node, OpBackward};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::{invert_permutation, is_permutation, Shape};
use crate::tensor::Tensor;

/// Copies `src` (laid out along `src_dims`) into a buffer where source axis
/// `a` advances by `dst_axis_strides[a]`. Shared by permute and broadcast
/// gather loops.
fn scatter_by_strides<E: Element>(
    src: &[E],
    src_dims: &[usize],
    dst_axis_strides: &[usize],
    dst: &mut [E],
) {
    let rank = src_dims.len();
    let mut index = vec![0usize; rank];
    let mut dst_flat = 0usize;
    for &v in src {
        dst[dst_flat] += v;
        for a in (0..rank).rev() {
            index[a] += 1;
            dst_flat += dst_axis_strides[a];
            if index[a] < src_dims[a] {
                break;
            }
            dst_flat -= index[a] * dst_axis_strides[a];
            index[a] = 0;
        }
    }
}

fn permute_data<E: Element>(src: &[E], src_dims: &[usize], order: &[usize]) -> Vec<E> {
    let out_dims: Vec<usize> = order.iter().map(|&a| src_dims[a]).collect();
    let out_strides = Shape::new(&out_dims).expect("permuted shape is valid").strides();
    let inverse = invert_permutation(order);
    // Source axis a lands at output axis inverse[a].
    let dst_axis_strides: Vec<usize> = (0..order.len()).map(|a| out_strides[inverse[a]]).collect();
    let mut out = vec![E::ZERO; src.len()];
    scatter_by_strides(src, src_dims, &dst_axis_strides, &mut out);
    out
}

struct PermuteOp {
    order: Vec<usize>,
}

impl<E: Element> OpBackward<E> for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let out_dims: Vec<usize> = self
            .order
            .iter()
            .map(|&a| inputs[0].shape().dims()[a])
            .collect();
        let grad = permute_data(out_grad, &out_dims, &invert_permutation(&self.order));
        Ok(vec![Some(grad)])
    }
}

struct ReshapeOp;

impl<E: Element> OpBackward<E> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        Ok(vec![Some(out_grad.to_vec())])
    }
}

struct BroadcastOp {
    src_dims: Vec<usize>,
    dst_dims: Vec<usize>,
}

impl<E: Element> OpBackward<E> for BroadcastOp {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }

    fn backward(&self, _inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        Ok(vec![Some(reduce_to_shape(
            out_grad,
            &self.dst_dims,
            &self.src_dims,
        ))])
    }
}

/// Sums `src` (laid out along `src_dims`) down to `dst_dims`, where each
/// destination extent equals the source extent or 1. Gradient counterpart
/// of broadcasting.
pub(crate) fn reduce_to_shape<E: Element>(
    src: &[E],
    src_dims: &[usize],
    dst_dims: &[usize],
) -> Vec<E> {
    let dst_shape = Shape::new(dst_dims).expect("reduce target shape is valid");
    let dst_strides = dst_shape.strides();
    let dst_axis_strides: Vec<usize> = dst_dims
        .iter()
        .zip(&dst_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let mut out = vec![E::ZERO; dst_shape.numel()];
    scatter_by_strides(src, src_dims, &dst_axis_strides, &mut out);
    out
}

/// Reads `src` through broadcast strides to materialize `dst_dims`.
pub(crate) fn broadcast_data<E: Element>(
    src: &[E],
    src_dims: &[usize],
    dst_dims: &[usize],
) -> Vec<E> {
    let src_strides = Shape::new(src_dims).expect("broadcast source shape is valid").strides();
    let read_strides: Vec<usize> = src_dims
        .iter()
        .zip(&src_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let dst_shape = Shape::new(dst_dims).expect("broadcast target shape is valid");
    let rank = dst_dims.len();
    let mut out = Vec::with_capacity(dst_shape.numel());
    let mut index = vec![0usize; rank];
    let mut src_flat = 0usize;
    for _ in 0..dst_shape.numel() {
        out.push(src[src_flat]);
        for a in (0..rank).rev() {
            index[a] += 1;
            src_flat += read_strides[a];
            if index[a] < dst_dims[a] {
                break;
            }
            src_flat -= index[a] * read_strides[a];
            index[a] = 0;
        }
    }
    out
}

struct ConcatOp {
    axis: usize,
}

impl<E: Element> OpBackward<E> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let dims = inputs[0].shape().dims();
        let (outer, _, inner) = super::axis_split(dims, self.axis);
        let chunks: Vec<usize> = inputs
            .iter()
            .map(|t| t.shape().dims()[self.axis] * inner)
            .collect();
        let total: usize = chunks.iter().sum();
        let mut grads: Vec<Vec<E>> = inputs.iter().map(|t| Vec::with_capacity(t.numel())).collect();
        for o in 0..outer {
            let mut offset = o * total;
            for (g, &chunk) in grads.iter_mut().zip(&chunks) {
                g.extend_from_slice(&out_grad[offset..offset + chunk]);
                offset += chunk;
            }
        }
        Ok(grads.into_iter().map(Some).collect())
    }
}

impl<E: Element> Tensor<E> {
    /// Reorders axes: output axis `k` is input axis `order[k]`. Backward is
    /// the inverse permutation.
    pub fn permute(&self, order: &[usize]) -> Result<Tensor<E>> {
        if !is_permutation(order, self.rank()) {
            return Err(Error::argument(format!(
                "order {:?} is not a permutation of 0..{}",
                order,
                self.rank()
            )));
        }
        let dims = self.shape().dims();
        let out_dims: Vec<usize> = order.iter().map(|&a| dims[a]).collect();
        let data = permute_data(&self.data(), dims, order);
        Ok(Tensor::from_op(
            Shape::new(&out_dims)?,
            data,
            Box::new(PermuteOp {
                order: order.to_vec(),
            }),
            vec![self.clone()],
        ))
    }

    /// Same elements, new shape. Shares storage with `self`.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor<E>> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {} ({} elements) to {} ({} elements)",
                self.shape(),
                self.numel(),
                shape,
                shape.numel()
            )));
        }
        let node = (grad_enabled() && self.tracks_grad())
            .then(|| Arc::new(Node::new(Box::new(ReshapeOp), vec![self.clone()])));
        Ok(self.view_of(shape, node))
    }

    /// Materializes `self` at `dims`, repeating along axes of extent 1.
    /// Backward sums over the repeated axes.
    pub fn broadcast_to(&self, dims: &[usize]) -> Result<Tensor<E>> {
        let src_dims = self.shape().dims();
        if src_dims.len() != dims.len()
            || src_dims
                .iter()
                .zip(dims)
                .any(|(&s, &d)| s != d && s != 1)
        {
            return Err(Error::shape(format!(
                "cannot broadcast {} to {:?}",
                self.shape(),
                dims
            )));
        }
        let data = broadcast_data(&self.data(), src_dims, dims);
        Ok(Tensor::from_op(
            Shape::new(dims)?,
            data,
            Box::new(BroadcastOp {
                src_dims: src_dims.to_vec(),
                dst_dims: dims.to_vec(),
            }),
            vec![self.clone()],
        ))
    }

    /// Joins tensors along `axis`; all other extents must match.
    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::argument("concat of an empty list"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::argument(format!(
                "concat axis {axis} out of range for rank {rank}"
            )));
        }
        let mut axis_total = 0;
        for t in parts {
            if t.rank() != rank {
                return Err(Error::shape("concat inputs must share rank".to_string()));
            }
            for a in 0..rank {
                if a != axis && t.shape().dims()[a] != first.shape().dims()[a] {
                    return Err(Error::shape(format!(
                        "concat inputs disagree on axis {a}: {} vs {}",
                        first.shape(),
                        t.shape()
                    )));
                }
            }
            axis_total += t.shape().dims()[axis];
        }
        let mut out_dims = first.shape().dims().to_vec();
        out_dims[axis] = axis_total;
        let out_shape = Shape::new(&out_dims)?;

        let (outer, _, inner) = super::axis_split(&out_dims, axis);
        let mut data = Vec::with_capacity(out_shape.numel());
        let guards: Vec<_> = parts.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (t, guard) in parts.iter().zip(&guards) {
                let chunk = t.shape().dims()[axis] * inner;
                data.extend_from_slice(&guard[o * chunk..(o + 1) * chunk]);
            }
        }
        drop(guards);
        Ok(Tensor::from_op(
            out_shape,
            data,
            Box::new(ConcatOp { axis }),
            parts.to_vec(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn identity_permutation_is_bitwise_identity() {
        let x: Tensor<f32> = Tensor::randn(&[2, 3, 4, 5], 0.0, 1.0, 3).unwrap();
        let y = x.permute(&[0, 1, 2, 3]).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn permute_moves_single_element_as_documented() {
        // Element at (1,2,3) under order (2,0,1) must appear at (3,1,2).
        let mut data = vec![0.0f32; 2 * 3 * 4];
        let src = (1 * 3 + 2) * 4 + 3;
        data[src] = 42.0;
        let x = Tensor::from_vec(&[2, 3, 4], data).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape().dims(), &[4, 2, 3]);
        let dst = (3 * 2 + 1) * 3 + 2;
        assert_eq!(y.to_vec()[dst], 42.0);
    }

    #[test]
    fn permute_then_inverse_round_trips() {
        let x: Tensor<f32> = Tensor::randn(&[2, 3, 4], 0.0, 1.0, 9).unwrap();
        let y = x.permute(&[2, 0, 1]).unwrap().permute(&[1, 2, 0]).unwrap();
        assert_eq!(x.to_vec(), y.to_vec());
    }

    #[test]
    fn reshape_checks_element_count() {
        let x: Tensor<f32> = Tensor::zeros(&[2, 3]).unwrap();
        assert!(x.reshape(&[7]).is_err());
        assert_eq!(x.reshape(&[3, 2]).unwrap().shape().dims(), &[3, 2]);
    }

    #[test]
    fn broadcast_repeats_rows_and_planes() {
        let x = Tensor::from_vec(&[2, 1], vec![1.0f32, 2.0]).unwrap();
        let y = x.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(x.broadcast_to(&[3, 3]).is_err());
    }

    #[test]
    fn concat_keeps_halves_intact() {
        let a = Tensor::from_vec(&[1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec(&[1, 2, 2], vec![5.0f32, 6.0, 7.0, 8.0]).unwrap();
        let c = Tensor::concat(&[a, b], 0).unwrap();
        assert_eq!(c.shape().dims(), &[2, 2, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn concat_inner_axis_interleaves_chunks() {
        let a = Tensor::from_vec(&[2, 1], vec![1.0f32, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![10.0f32, 11.0, 30.0, 31.0]).unwrap();
        let c = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape().dims(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1.0, 10.0, 11.0, 3.0, 30.0, 31.0]);
    }
}
