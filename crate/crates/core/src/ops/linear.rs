use crate::autodiff::OpBackward;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tensor::{Fill, Tensor};

/// Fully connected layer: y = x · weightᵀ + bias, weight stored (out, in).
pub struct Linear<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(weight: Tensor<E>, bias: Tensor<E>) -> Result<Linear<E>> {
        let wd = weight.shape().dims();
        if wd.len() != 2 {
            return Err(Error::shape(format!(
                "linear weight must be (out, in), got {}",
                weight.shape()
            )));
        }
        if bias.shape().dims() != [wd[0]] {
            return Err(Error::shape(format!(
                "linear bias must be ({}), got {}",
                wd[0],
                bias.shape()
            )));
        }
        Ok(Linear { weight, bias })
    }

    /// He-normal weight (std = sqrt(2 / in)), zero bias.
    pub fn seeded(in_dim: usize, out_dim: usize, seed: u64) -> Result<Linear<E>> {
        let weight = Tensor::new(
            Shape::new(&[out_dim, in_dim])?,
            Fill::Normal {
                mean: 0.0,
                std: (2.0 / in_dim as f64).sqrt(),
                seed,
            },
        )
        .trainable();
        let bias = Tensor::zeros(&[out_dim])?.trainable();
        Linear::new(weight, bias)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape().dims()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape().dims()[0]
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, d) = x.shape().dims2()?;
        if d != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects {} input features, got {}",
                self.in_dim(),
                x.shape()
            )));
        }
        let out_dim = self.out_dim();
        let xd = x.data();
        let wd = self.weight.data();
        let bd = self.bias.data();
        let mut out = Vec::with_capacity(n * out_dim);
        for ni in 0..n {
            let row = &xd[ni * d..(ni + 1) * d];
            for o in 0..out_dim {
                let wrow = &wd[o * d..(o + 1) * d];
                let mut acc = bd[o];
                for (&xv, &wv) in row.iter().zip(wrow) {
                    acc += xv * wv;
                }
                out.push(acc);
            }
        }
        drop((xd, wd, bd));
        Ok(Tensor::from_op(
            Shape::new(&[n, out_dim])?,
            out,
            Box::new(LinearOp),
            vec![x.clone(), self.weight.clone(), self.bias.clone()],
        ))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

struct LinearOp;

impl<E: Element> OpBackward<E> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let x = &inputs[0];
        let weight = &inputs[1];
        let bias = &inputs[2];
        let (n, d) = x.shape().dims2()?;
        let out_dim = weight.shape().dims()[0];

        let grad_x = x.tracks_grad().then(|| {
            let wd = weight.data();
            let mut gx = vec![E::ZERO; n * d];
            for ni in 0..n {
                let gx_row = &mut gx[ni * d..(ni + 1) * d];
                for o in 0..out_dim {
                    let g = out_grad[ni * out_dim + o];
                    let wrow = &wd[o * d..(o + 1) * d];
                    for (xv, &wv) in gx_row.iter_mut().zip(wrow) {
                        *xv += g * wv;
                    }
                }
            }
            gx
        });

        let grad_w = weight.tracks_grad().then(|| {
            let xd = x.data();
            let mut gw = vec![E::ZERO; out_dim * d];
            for ni in 0..n {
                let row = &xd[ni * d..(ni + 1) * d];
                for o in 0..out_dim {
                    let g = out_grad[ni * out_dim + o];
                    let gw_row = &mut gw[o * d..(o + 1) * d];
                    for (wv, &xv) in gw_row.iter_mut().zip(row) {
                        *wv += g * xv;
                    }
                }
            }
            gw
        });

        let grad_b = bias.tracks_grad().then(|| {
            let mut gb = vec![E::ZERO; out_dim];
            for ni in 0..n {
                for o in 0..out_dim {
                    gb[o] += out_grad[ni * out_dim + o];
                }
            }
            gb
        });

        Ok(vec![grad_x, grad_w, grad_b])
    }
}
