use crate::autodiff::OpBackward;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::axis_split;
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Reduction rule along one axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Max,
    Mean,
}

struct ReduceMeanOp {
    axis: usize,
}

impl<E: Element> OpBackward<E> for ReduceMeanOp {
    fn name(&self) -> &'static str {
        "reduce_mean"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let dims = inputs[0].shape().dims();
        let (outer, len, inner) = axis_split(dims, self.axis);
        let scale = E::ONE / E::from_usize(len);
        let mut grad = vec![E::ZERO; inputs[0].numel()];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                let gbase = o * inner;
                for i in 0..inner {
                    grad[base + i] = out_grad[gbase + i] * scale;
                }
            }
        }
        Ok(vec![Some(grad)])
    }
}

struct ReduceMaxOp {
    /// Flat input index of the selected maximum, per output element.
    argmax: Vec<usize>,
}

impl<E: Element> OpBackward<E> for ReduceMaxOp {
    fn name(&self) -> &'static str {
        "reduce_max"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let mut grad = vec![E::ZERO; inputs[0].numel()];
        for (&src, &g) in self.argmax.iter().zip(out_grad) {
            grad[src] += g;
        }
        Ok(vec![Some(grad)])
    }
}

struct GlobalAvgPoolOp;

impl<E: Element> OpBackward<E> for GlobalAvgPoolOp {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let (n, c, h, w) = inputs[0].shape().dims4()?;
        let scale = E::ONE / E::from_usize(h * w);
        let mut grad = Vec::with_capacity(inputs[0].numel());
        for nc in 0..n * c {
            let g = out_grad[nc] * scale;
            grad.extend(std::iter::repeat(g).take(h * w));
        }
        Ok(vec![Some(grad)])
    }
}

impl<E: Element> Tensor<E> {
    /// Max or mean along `axis`. With `keepdim` the axis stays at extent 1,
    /// otherwise it is removed (rank-1 tensors always keep it). Max routes
    /// its gradient to the first maximal element along the axis.
    pub fn reduce_axis(&self, axis: usize, mode: ReduceMode, keepdim: bool) -> Result<Tensor<E>> {
        let dims = self.shape().dims();
        if axis >= dims.len() {
            return Err(Error::argument(format!(
                "axis {axis} out of range for shape {}",
                self.shape()
            )));
        }
        let (outer, len, inner) = axis_split(dims, axis);
        let mut out_dims = dims.to_vec();
        if keepdim || dims.len() == 1 {
            out_dims[axis] = 1;
        } else {
            out_dims.remove(axis);
        }
        let out_shape = Shape::new(&out_dims)?;

        let data = self.data();
        match mode {
            ReduceMode::Mean => {
                let div = E::from_usize(len);
                let mut out = vec![E::ZERO; outer * inner];
                for o in 0..outer {
                    for a in 0..len {
                        let base = (o * len + a) * inner;
                        for i in 0..inner {
                            out[o * inner + i] += data[base + i];
                        }
                    }
                }
                for v in &mut out {
                    *v = *v / div;
                }
                drop(data);
                Ok(Tensor::from_op(
                    out_shape,
                    out,
                    Box::new(ReduceMeanOp { axis }),
                    vec![self.clone()],
                ))
            }
            ReduceMode::Max => {
                let mut out = Vec::with_capacity(outer * inner);
                let mut argmax = Vec::with_capacity(outer * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let mut best = data[o * len * inner + i];
                        let mut best_at = o * len * inner + i;
                        for a in 1..len {
                            let idx = (o * len + a) * inner + i;
                            if data[idx] > best {
                                best = data[idx];
                                best_at = idx;
                            }
                        }
                        out.push(best);
                        argmax.push(best_at);
                    }
                }
                drop(data);
                Ok(Tensor::from_op(
                    out_shape,
                    out,
                    Box::new(ReduceMaxOp { argmax }),
                    vec![self.clone()],
                ))
            }
        }
    }

    /// Mean over the two spatial axes of an (N,C,H,W) tensor, yielding (N,C).
    pub fn global_avg_pool(&self) -> Result<Tensor<E>> {
        let (n, c, h, w) = self.shape().dims4()?;
        let data = self.data();
        let div = E::from_usize(h * w);
        let mut out = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let plane = &data[nc * h * w..(nc + 1) * h * w];
            let sum = plane.iter().fold(E::ZERO, |acc, &v| acc + v);
            out.push(sum / div);
        }
        drop(data);
        Ok(Tensor::from_op(
            Shape::new(&[n, c])?,
            out,
            Box::new(GlobalAvgPoolOp),
            vec![self.clone()],
        ))
    }
}
