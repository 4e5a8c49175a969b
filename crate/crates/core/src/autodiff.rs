use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph construction on the current thread while alive. Nests.
pub struct NoGrad {
    prev: bool,
}

impl NoGrad {
    #[allow(clippy::new_without_default)]
    pub fn new() -> NoGrad {
        let prev = GRAD_ENABLED.with(|g| g.replace(false));
        NoGrad { prev }
    }
}

impl Drop for NoGrad {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|g| g.set(prev));
    }
}

/// Run `f` without recording operations.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = NoGrad::new();
    f()
}

/// Backward rule of one recorded operation: given the gradient of the loss
/// with respect to the op output, produce the gradient with respect to each
/// input (`None` for inputs that receive none).
pub(crate) trait OpBackward<E: Element>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>>;
}

/// Tape entry linking an op output back to its inputs.
pub(crate) struct Node<E: Element> {
    op: Box<dyn OpBackward<E>>,
    inputs: Vec<Tensor<E>>,
    consumed: AtomicBool,
}

impl<E: Element> Node<E> {
    pub(crate) fn new(op: Box<dyn OpBackward<E>>, inputs: Vec<Tensor<E>>) -> Node<E> {
        Node {
            op,
            inputs,
            consumed: AtomicBool::new(false),
        }
    }
}

impl<E: Element> Tensor<E> {
    /// Reverse-mode sweep from a scalar root. Gradients accumulate into the
    /// `grad` slot of every reachable trainable tensor. The graph is
    /// consumed: a second sweep over the same root is an error.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward root must be scalar, got shape {}",
                self.shape()
            )));
        }
        let root = self.node().ok_or_else(|| {
            Error::Graph("backward root is not the output of a recorded operation".into())
        })?;
        if root.consumed.swap(true, Ordering::SeqCst) {
            return Err(Error::Graph(
                "graph already consumed by a previous backward".into(),
            ));
        }

        let order = topo_order(&root);
        let mut pending: HashMap<*const Node<E>, Vec<E>> = HashMap::new();
        pending.insert(Arc::as_ptr(&root), vec![E::ONE]);

        for node in order.iter().rev() {
            let out_grad = pending
                .remove(&Arc::as_ptr(node))
                .expect("every node in topological order receives a gradient");
            let input_grads = node.op.backward(&node.inputs, &out_grad)?;
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, grad) in node.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if grad.len() != input.numel() {
                    return Err(Error::Graph(format!(
                        "op {} produced a gradient of {} elements for an input of {}",
                        node.op.name(),
                        grad.len(),
                        input.numel()
                    )));
                }
                if let Some(producer) = input.node() {
                    match pending.entry(Arc::as_ptr(&producer)) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (a, b) in e.get_mut().iter_mut().zip(&grad) {
                                *a += *b;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(grad);
                        }
                    }
                } else if input.requires_grad() {
                    input.accumulate_grad(&grad);
                }
            }
        }
        Ok(())
    }
}

/// Children-before-parents ordering of the graph under `root`.
fn topo_order<E: Element>(root: &Arc<Node<E>>) -> Vec<Arc<Node<E>>> {
    enum Step<E: Element> {
        Enter(Arc<Node<E>>),
        Emit(Arc<Node<E>>),
    }
    let mut order = Vec::new();
    let mut seen: std::collections::HashSet<*const Node<E>> = std::collections::HashSet::new();
    let mut stack = vec![Step::Enter(Arc::clone(root))];
    while let Some(step) = stack.pop() {
        match step {
            Step::Enter(node) => {
                if !seen.insert(Arc::as_ptr(&node)) {
                    continue;
                }
                stack.push(Step::Emit(Arc::clone(&node)));
                for input in &node.inputs {
                    if let Some(producer) = input.node() {
                        stack.push(Step::Enter(producer));
                    }
                }
            }
            Step::Emit(node) => order.push(node),
        }
    }
    order
}

/// Central-difference gradient check of `f` against one tensor `x`.
///
/// `f` is evaluated once with the graph enabled to obtain analytic
/// gradients, then twice per element of `x` at `x[i] +- eps` with the graph
/// disabled. Returns the worst relative error
/// `|a - n| / max(|a|, |n|, 1e-8)` over all elements.
pub fn finite_diff_check<E: Element, F>(mut f: F, x: &Tensor<E>, eps: E) -> Result<E>
where
    F: FnMut() -> Result<Tensor<E>>,
{
    if !x.requires_grad() {
        return Err(Error::argument(
            "finite_diff_check target must be a trainable tensor",
        ));
    }
    x.zero_grad();
    let y = f()?;
    if y.numel() != 1 {
        return Err(Error::argument(format!(
            "finite_diff_check objective must be scalar, got shape {}",
            y.shape()
        )));
    }
    y.backward()?;
    let analytic = x
        .grad()
        .ok_or_else(|| Error::Graph("no gradient reached the checked tensor".into()))?;

    let _guard = NoGrad::new();
    let tiny = E::from_f64(1e-8);
    let two_eps = eps + eps;
    let mut worst = E::ZERO;
    for i in 0..x.numel() {
        let original = x.to_vec()[i];
        x.with_data_mut(|d| d[i] = original + eps);
        let plus = f()?.item()?;
        x.with_data_mut(|d| d[i] = original - eps);
        let minus = f()?.item()?;
        x.with_data_mut(|d| d[i] = original);
        let numeric = (plus - minus) / two_eps;
        let a = analytic[i];
        let denom = a.abs().maximum(numeric.abs()).maximum(tiny);
        let rel = (a - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

/// [`finite_diff_check`] over a set of named parameters sharing one
/// objective. Analytic gradients come from a single backward sweep; each
/// parameter is then probed numerically. Returns `(name, worst rel err)`
/// pairs in input order.
pub fn finite_diff_check_many<E: Element, F>(
    mut f: F,
    params: &[(String, Tensor<E>)],
    eps: E,
) -> Result<Vec<(String, E)>>
where
    F: FnMut() -> Result<Tensor<E>>,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let y = f()?;
    if y.numel() != 1 {
        return Err(Error::argument(format!(
            "finite_diff_check objective must be scalar, got shape {}",
            y.shape()
        )));
    }
    y.backward()?;

    let _guard = NoGrad::new();
    let tiny = E::from_f64(1e-8);
    let two_eps = eps + eps;
    let mut report = Vec::with_capacity(params.len());
    for (name, p) in params {
        let analytic = p.grad().ok_or_else(|| {
            Error::Graph(format!("no gradient reached parameter \"{name}\""))
        })?;
        let mut worst = E::ZERO;
        for i in 0..p.numel() {
            let original = p.to_vec()[i];
            p.with_data_mut(|d| d[i] = original + eps);
            let plus = f()?.item()?;
            p.with_data_mut(|d| d[i] = original - eps);
            let minus = f()?.item()?;
            p.with_data_mut(|d| d[i] = original);
            let numeric = (plus - minus) / two_eps;
            let a = analytic[i];
            let denom = a.abs().maximum(numeric.abs()).maximum(tiny);
            let rel = (a - numeric).abs() / denom;
            if rel > worst {
                worst = rel;
            }
        }
        report.push((name.clone(), worst));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_grad_nests_and_restores() {
        assert!(grad_enabled());
        {
            let _a = NoGrad::new();
            assert!(!grad_enabled());
            {
                let _b = NoGrad::new();
                assert!(!grad_enabled());
            }
            assert!(!grad_enabled());
        }
        assert!(grad_enabled());
    }

    #[test]
    fn backward_requires_scalar_root_with_node() {
        let t: Tensor<f32> = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(t.backward(), Err(Error::Graph(_))));
        let s: Tensor<f32> = Tensor::scalar(1.0);
        assert!(matches!(s.backward(), Err(Error::Graph(_))));
    }
}
