//! Cross-entropy loss over a batch of logits.

use crate::autodiff::OpBackward;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;
use crate::tensor::Tensor;

struct CrossEntropyOp<E> {
    probs: Vec<E>,
    labels: Vec<usize>,
    classes: usize,
}

impl<E: Element> OpBackward<E> for CrossEntropyOp<E> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, _inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let rows = self.labels.len();
        let scale = out_grad[0] / E::from_usize(rows);
        let mut grad = self.probs.clone();
        for (row, &label) in self.labels.iter().enumerate() {
            grad[row * self.classes + label] = grad[row * self.classes + label] - E::ONE;
        }
        for g in grad.iter_mut() {
            *g = *g * scale;
        }
        Ok(vec![Some(grad)])
    }
}

/// Mean negative log-likelihood of `labels` under the softmax of `logits`.
///
/// `logits` has shape `(N, K)` and `labels` holds one class index per row.
/// The softmax is computed with the row maximum subtracted so large logits
/// stay finite. Returns a scalar tensor suitable as a `backward` root; the
/// gradient with respect to the logits is `(softmax - one_hot) / N`.
pub fn cross_entropy<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
    let (rows, classes) = logits.shape().dims2()?;
    if labels.len() != rows {
        return Err(Error::argument(format!(
            "cross_entropy got {} labels for {} logit rows",
            labels.len(),
            rows
        )));
    }
    if rows == 0 {
        return Err(Error::argument("cross_entropy needs at least one row"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::argument(format!(
            "label {bad} is out of range for {classes} classes"
        )));
    }

    let data = logits.to_vec();
    let mut probs = vec![E::ZERO; rows * classes];
    let mut total = E::ZERO;
    for (row, &label) in labels.iter().enumerate() {
        let slot = &data[row * classes..(row + 1) * classes];
        let max = slot.iter().fold(slot[0], |acc, &v| acc.maximum(v));
        let mut denom = E::ZERO;
        for (k, &v) in slot.iter().enumerate() {
            let e = (v - max).exp();
            probs[row * classes + k] = e;
            denom = denom + e;
        }
        for p in &mut probs[row * classes..(row + 1) * classes] {
            *p = *p / denom;
        }
        let lse = max + denom.ln();
        total = total + (lse - slot[label]);
    }
    let mean = total / E::from_usize(rows);

    Ok(Tensor::from_op(
        Shape::new(&[1])?,
        vec![mean],
        Box::new(CrossEntropyOp {
            probs,
            labels: labels.to_vec(),
            classes,
        }),
        vec![logits.clone()],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits: Tensor<f64> = Tensor::from_vec(&[2, 7], vec![0.3; 2 * 7]).unwrap();
        let loss = cross_entropy(&logits, &[4, 0]).unwrap();
        let expected = (7.0f64).ln();
        assert!((loss.to_vec()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn forty_on_the_true_class_drives_loss_to_zero() {
        let mut data = vec![0.0f64; 3 * 5];
        let labels = [2usize, 0, 4];
        for (row, &label) in labels.iter().enumerate() {
            data[row * 5 + label] = 40.0;
        }
        let logits: Tensor<f64> = Tensor::from_vec(&[3, 5], data).unwrap();
        let loss = cross_entropy(&logits, &labels).unwrap();
        assert!(loss.to_vec()[0] < 1e-12);
    }

    #[test]
    fn gradient_matches_softmax_minus_one_hot() {
        let logits: Tensor<f64> = Tensor::randn(&[4, 6], 0.0, 2.0, 11).unwrap().trainable();
        let labels = [5usize, 0, 3, 3];
        cross_entropy(&logits, &labels).unwrap().backward().unwrap();
        let grad = logits.grad().unwrap();

        let data = logits.to_vec();
        for row in 0..4 {
            let slot = &data[row * 6..(row + 1) * 6];
            let max = slot.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = slot.iter().map(|v| (v - max).exp()).sum();
            for k in 0..6 {
                let p = (slot[k] - max).exp() / denom;
                let one_hot = if labels[row] == k { 1.0 } else { 0.0 };
                let expected = (p - one_hot) / 4.0;
                assert!((grad[row * 6 + k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Tensor<f64> = Tensor::randn(&[3, 4], 0.0, 1.5, 7).unwrap().trainable();
        let labels = [1usize, 3, 0];
        cross_entropy(&logits, &labels).unwrap().backward().unwrap();
        let grad = logits.grad().unwrap();

        let base = logits.to_vec();
        let eps = 1e-6;
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut bumped = base.clone();
                bumped[i] += delta;
                let t: Tensor<f64> = Tensor::from_vec(&[3, 4], bumped).unwrap();
                cross_entropy(&t, &labels).unwrap().to_vec()[0]
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (grad[i] - numeric).abs() < 1e-5,
                "element {i}: analytic {} vs numeric {numeric}",
                grad[i]
            );
        }
    }

    #[test]
    fn rejects_out_of_range_labels_and_bad_counts() {
        let logits: Tensor<f32> = Tensor::from_vec(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(cross_entropy(&logits, &[0, 3]).is_err());
        assert!(cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let logits: Tensor<f32> = Tensor::from_vec(&[2, 2], vec![500.0, -500.0, 499.0, 0.0]).unwrap();
        let loss = cross_entropy(&logits, &[0, 1]).unwrap().to_vec()[0];
        assert!(loss.is_finite());
    }
}
