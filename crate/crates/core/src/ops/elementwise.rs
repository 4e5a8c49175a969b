use crate::autodiff::OpBackward;
use crate::element::{sigmoid, Element};
use crate::error::{Error, Result};
use crate::ops::movement::{broadcast_data, reduce_to_shape};
use crate::shape::Shape;
use crate::tensor::Tensor;

/// Binary elementwise operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwKind {
    Add,
    Mul,
}

struct ReluOp;

impl<E: Element> OpBackward<E> for ReluOp {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let x = inputs[0].data();
        let grad = x
            .iter()
            .zip(out_grad)
            .map(|(&v, &g)| if v > E::ZERO { g } else { E::ZERO })
            .collect();
        Ok(vec![Some(grad)])
    }
}

struct SigmoidOp<E: Element> {
    /// Forward output, reused as s(1-s) in the backward pass.
    out: Vec<E>,
}

impl<E: Element> OpBackward<E> for SigmoidOp<E> {
    fn name(&self) -> &'static str {
        "sigmoid"
    }

    fn backward(&self, _inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let grad = self
            .out
            .iter()
            .zip(out_grad)
            .map(|(&s, &g)| g * s * (E::ONE - s))
            .collect();
        Ok(vec![Some(grad)])
    }
}

struct EwOp {
    kind: EwKind,
    y_dims: Vec<usize>,
}

impl<E: Element> OpBackward<E> for EwOp {
    fn name(&self) -> &'static str {
        match self.kind {
            EwKind::Add => "add",
            EwKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let x = &inputs[0];
        let y = &inputs[1];
        let x_dims = x.shape().dims();
        match self.kind {
            EwKind::Add => {
                let gx = x.tracks_grad().then(|| out_grad.to_vec());
                let gy = y
                    .tracks_grad()
                    .then(|| reduce_to_shape(out_grad, x_dims, &self.y_dims));
                Ok(vec![gx, gy])
            }
            EwKind::Mul => {
                let yb = broadcast_data(&y.data(), &self.y_dims, x_dims);
                let gx = x.tracks_grad().then(|| {
                    out_grad
                        .iter()
                        .zip(&yb)
                        .map(|(&g, &v)| g * v)
                        .collect::<Vec<E>>()
                });
                let gy = y.tracks_grad().then(|| {
                    let xg = x.data();
                    let prod: Vec<E> = out_grad
                        .iter()
                        .zip(xg.iter())
                        .map(|(&g, &v)| g * v)
                        .collect();
                    reduce_to_shape(&prod, x_dims, &self.y_dims)
                });
                Ok(vec![gx, gy])
            }
        }
    }
}

struct DivScalarOp<E: Element> {
    divisor: E,
}

impl<E: Element> OpBackward<E> for DivScalarOp<E> {
    fn name(&self) -> &'static str {
        "div_scalar"
    }

    fn backward(&self, _inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        Ok(vec![Some(
            out_grad.iter().map(|&g| g / self.divisor).collect(),
        )])
    }
}

struct SumAllOp;

impl<E: Element> OpBackward<E> for SumAllOp {
    fn name(&self) -> &'static str {
        "sum_all"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        Ok(vec![Some(vec![out_grad[0]; inputs[0].numel()])])
    }
}

impl<E: Element> Tensor<E> {
    pub fn relu(&self) -> Result<Tensor<E>> {
        let data = self
            .data()
            .iter()
            .map(|&v| v.maximum(E::ZERO))
            .collect();
        Ok(Tensor::from_op(
            self.shape().clone(),
            data,
            Box::new(ReluOp),
            vec![self.clone()],
        ))
    }

    /// Logistic function, strictly inside (0,1) for finite inputs.
    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        let out: Vec<E> = self.data().iter().map(|&v| sigmoid(v)).collect();
        Ok(Tensor::from_op(
            self.shape().clone(),
            out.clone(),
            Box::new(SigmoidOp { out }),
            vec![self.clone()],
        ))
    }

    /// Elementwise combine with `y`, which must have the same rank and be
    /// broadcastable to `self` (each extent equal or 1). Gradients
    /// sum-reduce over broadcast axes.
    pub fn ew(&self, y: &Tensor<E>, kind: EwKind) -> Result<Tensor<E>> {
        let x_dims = self.shape().dims();
        let y_dims = y.shape().dims();
        if x_dims.len() != y_dims.len()
            || y_dims
                .iter()
                .zip(x_dims)
                .any(|(&yd, &xd)| yd != xd && yd != 1)
        {
            return Err(Error::shape(format!(
                "cannot broadcast {} onto {}",
                y.shape(),
                self.shape()
            )));
        }
        let yb = broadcast_data(&y.data(), y_dims, x_dims);
        let xg = self.data();
        let data: Vec<E> = match kind {
            EwKind::Add => xg.iter().zip(&yb).map(|(&a, &b)| a + b).collect(),
            EwKind::Mul => xg.iter().zip(&yb).map(|(&a, &b)| a * b).collect(),
        };
        drop(xg);
        Ok(Tensor::from_op(
            self.shape().clone(),
            data,
            Box::new(EwOp {
                kind,
                y_dims: y_dims.to_vec(),
            }),
            vec![self.clone(), y.clone()],
        ))
    }

    pub fn add(&self, y: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew(y, EwKind::Add)
    }

    pub fn mul(&self, y: &Tensor<E>) -> Result<Tensor<E>> {
        self.ew(y, EwKind::Mul)
    }

    pub fn div_scalar(&self, divisor: f64) -> Result<Tensor<E>> {
        if divisor == 0.0 {
            return Err(Error::argument("division by zero"));
        }
        let d = E::from_f64(divisor);
        let data = self.data().iter().map(|&v| v / d).collect();
        Ok(Tensor::from_op(
            self.shape().clone(),
            data,
            Box::new(DivScalarOp { divisor: d }),
            vec![self.clone()],
        ))
    }

    /// Sum of every element, as a scalar tensor of shape (1).
    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let total = self.data().iter().fold(E::ZERO, |acc, &v| acc + v);
        Ok(Tensor::from_op(
            Shape::new(&[1])?,
            vec![total],
            Box::new(SumAllOp),
            vec![self.clone()],
        ))
    }
}
