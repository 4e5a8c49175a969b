use crate::autodiff::OpBackward;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel batch normalization over (N,H,W). Training mode normalizes
/// with batch statistics and updates the running estimates by exponential
/// moving average (unbiased variance, PyTorch convention); eval mode uses
/// only the running estimates and is fully deterministic.
pub struct BatchNorm2d<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub eps: f64,
    pub momentum: f64,
}

impl<E: Element> BatchNorm2d<E> {
    /// Identity-initialized layer: gamma 1, beta 0, running mean 0, running
    /// variance 1, eps 1e-5, momentum 0.1.
    pub fn new(channels: usize) -> Result<BatchNorm2d<E>> {
        Ok(BatchNorm2d {
            gamma: Tensor::full(&[channels], 1.0)?.trainable(),
            beta: Tensor::zeros(&[channels])?.trainable(),
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::full(&[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn forward(&self, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let (n, c, h, w) = x.shape().dims4()?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm over {} channels applied to {}",
                self.channels(),
                x.shape()
            )));
        }
        let m = n * h * w;
        if training && m == 1 {
            return Err(Error::DegenerateBatch);
        }

        let eps = E::from_f64(self.eps);
        let (mean, inv_std) = if training {
            let xd = x.data();
            let mut mean = vec![E::ZERO; c];
            let mut var = vec![E::ZERO; c];
            let count = E::from_usize(m);
            for ci in 0..c {
                let mut acc = E::ZERO;
                for ni in 0..n {
                    let plane = &xd[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for &v in plane {
                        acc += v;
                    }
                }
                let mu = acc / count;
                let mut sq = E::ZERO;
                for ni in 0..n {
                    let plane = &xd[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for &v in plane {
                        let d = v - mu;
                        sq += d * d;
                    }
                }
                mean[ci] = mu;
                var[ci] = sq / count;
            }
            drop(xd);

            let mom = E::from_f64(self.momentum);
            let keep = E::ONE - mom;
            let unbias = E::from_usize(m) / E::from_usize(m - 1);
            self.running_mean.with_data_mut(|rm| {
                for (r, &mu) in rm.iter_mut().zip(&mean) {
                    *r = keep * *r + mom * mu;
                }
            });
            self.running_var.with_data_mut(|rv| {
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = keep * *r + mom * v * unbias;
                }
            });

            let inv_std: Vec<E> = var.iter().map(|&v| E::ONE / (v + eps).sqrt()).collect();
            (mean, inv_std)
        } else {
            let mean = self.running_mean.to_vec();
            let inv_std: Vec<E> = self
                .running_var
                .to_vec()
                .iter()
                .map(|&v| E::ONE / (v + eps).sqrt())
                .collect();
            (mean, inv_std)
        };

        let xd = x.data();
        let gd = self.gamma.data();
        let bd = self.beta.data();
        let mut out = Vec::with_capacity(x.numel());
        for ni in 0..n {
            for ci in 0..c {
                let plane = &xd[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                let (mu, inv, ga, be) = (mean[ci], inv_std[ci], gd[ci], bd[ci]);
                for &v in plane {
                    out.push(ga * (v - mu) * inv + be);
                }
            }
        }
        drop((xd, gd, bd));

        Ok(Tensor::from_op(
            x.shape().clone(),
            out,
            Box::new(BatchNormOp {
                mean,
                inv_std,
                training,
            }),
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
        ))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }

    /// Non-trainable state that still belongs in checkpoints.
    pub fn buffers(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.running_mean"), self.running_mean.clone()));
        out.push((format!("{prefix}.running_var"), self.running_var.clone()));
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

struct BatchNormOp<E: Element> {
    mean: Vec<E>,
    inv_std: Vec<E>,
    training: bool,
}

impl<E: Element> OpBackward<E> for BatchNormOp<E> {
    fn name(&self) -> &'static str {
        "batchnorm2d"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let x = &inputs[0];
        let gamma = &inputs[1];
        let (n, c, h, w) = x.shape().dims4()?;
        let m = n * h * w;
        let count = E::from_usize(m);

        let xd = x.data();
        let gd = gamma.data();
        let mut grad_x = vec![E::ZERO; x.numel()];
        let mut grad_gamma = vec![E::ZERO; c];
        let mut grad_beta = vec![E::ZERO; c];

        for ci in 0..c {
            let (mu, inv) = (self.mean[ci], self.inv_std[ci]);
            let mut sum_g = E::ZERO;
            let mut sum_gx = E::ZERO;
            for ni in 0..n {
                let base = (ni * c + ci) * h * w;
                for i in 0..h * w {
                    let g = out_grad[base + i];
                    let xhat = (xd[base + i] - mu) * inv;
                    sum_g += g;
                    sum_gx += g * xhat;
                }
            }
            grad_beta[ci] = sum_g;
            grad_gamma[ci] = sum_gx;

            let scale = gd[ci] * inv;
            if self.training {
                let mean_g = sum_g / count;
                let mean_gx = sum_gx / count;
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for i in 0..h * w {
                        let g = out_grad[base + i];
                        let xhat = (xd[base + i] - mu) * inv;
                        grad_x[base + i] = scale * (g - mean_g - xhat * mean_gx);
                    }
                }
            } else {
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for i in 0..h * w {
                        grad_x[base + i] = scale * out_grad[base + i];
                    }
                }
            }
        }
        drop((xd, gd));

        Ok(vec![
            x.tracks_grad().then_some(grad_x),
            Some(grad_gamma),
            Some(grad_beta),
        ])
    }
}
