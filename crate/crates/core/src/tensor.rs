use std::io::{Read, Write};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};
use rand_distr::Distribution;

use crate::autodiff::{grad_enabled, Node, OpBackward};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::shape::Shape;

/// Fill rule for a freshly created tensor.
#[derive(Debug, Clone, Copy)]
pub enum Fill {
    Zeros,
    Constant(f64),
    /// Gaussian values; identical seeds produce identical tensors.
    Normal { mean: f64, std: f64, seed: u64 },
}

struct TensorInner<E: Element> {
    shape: Shape,
    data: Arc<RwLock<Vec<E>>>,
    grad: Mutex<Option<Vec<E>>>,
    requires_grad: bool,
    node: Option<Arc<Node<E>>>,
}

/// N-dimensional array of floats in row-major order. Values are immutable
/// once created except through [`Tensor::with_data_mut`] (optimizer updates,
/// batch-norm running statistics, finite-difference probes). Cloning is
/// cheap: handles share storage.
pub struct Tensor<E: Element> {
    inner: Arc<TensorInner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape().dims())
            .field("dtype", &E::DTYPE)
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Shape, fill: Fill) -> Tensor<E> {
        let n = shape.numel();
        let data = match fill {
            Fill::Zeros => vec![E::ZERO; n],
            Fill::Constant(c) => vec![E::from_f64(c); n],
            Fill::Normal { mean, std, seed } => {
                let mut rng = seeded_rng(seed);
                let dist = rand_distr::Normal::new(mean, std).expect("finite std");
                (0..n).map(|_| E::from_f64(dist.sample(&mut rng))).collect()
            }
        };
        Tensor::from_parts(shape, Arc::new(RwLock::new(data)), false, None)
    }

    pub fn zeros(dims: &[usize]) -> Result<Tensor<E>> {
        Ok(Tensor::new(Shape::new(dims)?, Fill::Zeros))
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Tensor<E>> {
        Ok(Tensor::new(Shape::new(dims)?, Fill::Constant(value)))
    }

    pub fn randn(dims: &[usize], mean: f64, std: f64, seed: u64) -> Result<Tensor<E>> {
        Ok(Tensor::new(Shape::new(dims)?, Fill::Normal { mean, std, seed }))
    }

    pub fn from_vec(dims: &[usize], data: Vec<E>) -> Result<Tensor<E>> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor::from_parts(
            shape,
            Arc::new(RwLock::new(data)),
            false,
            None,
        ))
    }

    /// Scalar tensor of shape (1).
    pub fn scalar(value: E) -> Tensor<E> {
        Tensor::from_parts(
            Shape::new(&[1]).expect("valid"),
            Arc::new(RwLock::new(vec![value])),
            false,
            None,
        )
    }

    fn from_parts(
        shape: Shape,
        data: Arc<RwLock<Vec<E>>>,
        requires_grad: bool,
        node: Option<Arc<Node<E>>>,
    ) -> Tensor<E> {
        Tensor {
            inner: Arc::new(TensorInner {
                shape,
                data,
                grad: Mutex::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Mark this tensor as a trainable parameter: `backward` will populate
    /// its gradient slot.
    pub fn trainable(self) -> Tensor<E> {
        Tensor::from_parts(
            self.inner.shape.clone(),
            Arc::clone(&self.inner.data),
            true,
            None,
        )
    }

    /// Result of a differentiable operation: attaches a tape node when
    /// gradients are enabled and some input tracks them.
    pub(crate) fn from_op(
        shape: Shape,
        data: Vec<E>,
        op: Box<dyn OpBackward<E>>,
        inputs: Vec<Tensor<E>>,
    ) -> Tensor<E> {
        debug_assert_eq!(shape.numel(), data.len());
        let track = grad_enabled() && inputs.iter().any(|t| t.tracks_grad());
        let node = track.then(|| Arc::new(Node::new(op, inputs)));
        Tensor::from_parts(shape, Arc::new(RwLock::new(data)), false, node)
    }

    /// Same storage, new shape (element counts must match).
    pub(crate) fn view_of(&self, shape: Shape, node: Option<Arc<Node<E>>>) -> Tensor<E> {
        debug_assert_eq!(shape.numel(), self.numel());
        Tensor::from_parts(shape, Arc::clone(&self.inner.data), false, node)
    }

    pub fn shape(&self) -> &Shape {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when gradients flow through or into this tensor.
    pub(crate) fn tracks_grad(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<Arc<Node<E>>> {
        self.inner.node.clone()
    }

    pub(crate) fn data(&self) -> RwLockReadGuard<'_, Vec<E>> {
        self.inner.data.read()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.read().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {}",
                self.shape()
            )));
        }
        Ok(self.inner.data.read()[0])
    }

    /// In-place mutation of the stored values. Reserved for optimizer steps,
    /// running statistics, checkpoint loading, and finite-difference probes;
    /// never call while the tensor is captured in a live graph.
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [E]) -> R) -> R {
        f(&mut self.inner.data.write())
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock() = None;
    }

    /// Add `g` into the gradient slot (gradients accumulate across fan-out).
    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.lock();
        match slot.as_mut() {
            Some(acc) => {
                for (a, &b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.read().iter().all(|v| v.is_finite())
    }

    /// Serialize as a TSR1 record: magic, rank (u32 LE), extents (u32 LE),
    /// raw 32-bit little-endian floats.
    pub fn write_tsr1(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"TSR1")?;
        let dims = self.shape().dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for &d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.inner.data.read().iter() {
            w.write_all(&(v.to_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_tsr1(r: &mut impl Read) -> Result<Tensor<E>> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("truncated tensor record: {e}")))?;
        if &magic != b"TSR1" {
            return Err(Error::Format(format!(
                "bad tensor magic {:?}, expected \"TSR1\"",
                magic
            )));
        }
        let rank = read_u32(r)? as usize;
        if rank == 0 || rank > 32 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r)? as usize);
        }
        let shape = Shape::new(&dims).map_err(|e| Error::Format(e.to_string()))?;
        let mut data = Vec::with_capacity(shape.numel());
        let mut buf = [0u8; 4];
        for _ in 0..shape.numel() {
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated tensor data: {e}")))?;
            data.push(E::from_f64(f32::from_le_bytes(buf) as f64));
        }
        Tensor::from_vec(&dims, data)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated stream: {e}")))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_specs() {
        let z: Tensor<f32> = Tensor::zeros(&[2, 2]).unwrap();
        assert_eq!(z.to_vec(), vec![0.0; 4]);

        let c: Tensor<f32> = Tensor::full(&[3], 1.5).unwrap();
        assert_eq!(c.to_vec(), vec![1.5, 1.5, 1.5]);
    }

    #[test]
    fn seeded_normal_is_reproducible_bitwise() {
        let a: Tensor<f32> = Tensor::randn(&[4], 0.0, 1.0, 7).unwrap();
        let b: Tensor<f32> = Tensor::randn(&[4], 0.0, 1.0, 7).unwrap();
        let (av, bv) = (a.to_vec(), b.to_vec());
        assert!(av.iter().zip(&bv).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c: Tensor<f32> = Tensor::randn(&[4], 0.0, 1.0, 8).unwrap();
        assert_ne!(av, c.to_vec());
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn tsr1_round_trip_is_bitwise() {
        let t: Tensor<f32> = Tensor::randn(&[2, 3, 4], 0.5, 2.0, 11).unwrap();
        let mut buf = Vec::new();
        t.write_tsr1(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"TSR1");
        let back: Tensor<f32> = Tensor::read_tsr1(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape().dims(), t.shape().dims());
        assert!(back
            .to_vec()
            .iter()
            .zip(t.to_vec().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn tsr1_rejects_garbage() {
        let mut buf = b"NOPE".to_vec();
        buf.extend_from_slice(&[0u8; 16]);
        assert!(matches!(
            Tensor::<f32>::read_tsr1(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));

        // Truncated data section.
        let t: Tensor<f32> = Tensor::zeros(&[4]).unwrap();
        let mut full = Vec::new();
        t.write_tsr1(&mut full).unwrap();
        full.truncate(full.len() - 2);
        assert!(matches!(
            Tensor::<f32>::read_tsr1(&mut full.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
