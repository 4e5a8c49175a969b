//! Python bindings: tensors with reverse-mode gradients, attention blocks,
//! the host network, parameter accounting, gradient checking, and a small
//! synthetic training entry point. Everything computes in f32, matching
//! the command-line trainer.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use tripse_core::rng::mix_seed;
use tripse_core::{
    gradcheck_backbone, gradcheck_block, run_training, synth_dataset, AttentionBlock,
    AttentionKind, BackboneConfig, MiniBackbone, StageSpec, Tensor, TrainPlan,
};

fn py_err(e: tripse_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_kind(variant: &str) -> PyResult<AttentionKind> {
    variant.parse().map_err(py_err)
}

fn widths4(widths: Option<Vec<usize>>, default: [usize; 4]) -> PyResult<[usize; 4]> {
    match widths {
        None => Ok(default),
        Some(v) => v.try_into().map_err(|v: Vec<usize>| {
            PyValueError::new_err(format!("widths needs exactly 4 entries, got {}", v.len()))
        }),
    }
}

/// A dense tensor with optional reverse-mode gradient tracking.
#[pyclass(name = "Tensor", from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor<f32>,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(dims: Vec<usize>, data: Vec<f32>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::from_vec(&dims, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zeros(dims: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::zeros(&dims).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (dims, mean = 0.0, std = 1.0, seed = 0))]
    fn randn(dims: Vec<usize>, mean: f64, std: f64, seed: u64) -> PyResult<Self> {
        Ok(PyTensor {
            inner: Tensor::randn(&dims, mean, std, seed).map_err(py_err)?,
        })
    }

    /// A gradient-tracking handle to the same storage.
    fn trainable(&self) -> Self {
        PyTensor {
            inner: self.inner.clone().trainable(),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().dims().to_vec()
    }

    fn tolist(&self) -> Vec<f32> {
        self.inner.to_vec()
    }

    fn add(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.add(&other.inner).map_err(py_err)?,
        })
    }

    fn mul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.mul(&other.inner).map_err(py_err)?,
        })
    }

    fn relu(&self) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.relu().map_err(py_err)?,
        })
    }

    fn sigmoid(&self) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.sigmoid().map_err(py_err)?,
        })
    }

    fn sum_all(&self) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.sum_all().map_err(py_err)?,
        })
    }

    fn reshape(&self, dims: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.reshape(&dims).map_err(py_err)?,
        })
    }

    fn permute(&self, order: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor {
            inner: self.inner.permute(&order).map_err(py_err)?,
        })
    }

    /// Backpropagates from this scalar through the recorded graph.
    fn backward(&self) -> PyResult<()> {
        self.inner.backward().map_err(py_err)
    }

    fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad()
    }

    fn zero_grad(&self) {
        self.inner.zero_grad();
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape().dims())
    }
}

/// One attention block of any variant, fixed to a declared (C,H,W).
#[pyclass(name = "Attention")]
struct PyAttention {
    inner: AttentionBlock<f32>,
    kind: AttentionKind,
}

#[pymethods]
impl PyAttention {
    #[new]
    #[pyo3(signature = (variant, channels, height, width, reduction = 16, kernel = 7, seed = 0))]
    fn new(
        variant: &str,
        channels: usize,
        height: usize,
        width: usize,
        reduction: usize,
        kernel: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = parse_kind(variant)?;
        Ok(PyAttention {
            inner: AttentionBlock::new(kind, (channels, height, width), reduction, kernel, seed)
                .map_err(py_err)?,
            kind,
        })
    }

    #[pyo3(signature = (x, training = false))]
    fn forward(&self, x: &PyTensor, training: bool) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: self.inner.forward(&x.inner, training).map_err(py_err)?,
        })
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn variant(&self) -> String {
        self.kind.label().to_string()
    }

    fn __repr__(&self) -> String {
        format!(
            "Attention(variant='{}', params={})",
            self.kind.label(),
            self.inner.param_count()
        )
    }
}

/// The four-stage host CNN with one attention block per stage.
#[pyclass(name = "Model")]
struct PyModel {
    inner: MiniBackbone<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (variant = "tripse1", classes = 7, image_size = 32, widths = None,
                        depth = 1, reduction = None, kernel = 7, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        variant: &str,
        classes: usize,
        image_size: usize,
        widths: Option<Vec<usize>>,
        depth: usize,
        reduction: Option<usize>,
        kernel: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = parse_kind(variant)?;
        let widths = widths4(widths, [16, 32, 64, 128])?;
        let reduction = reduction.unwrap_or(match kind {
            AttentionKind::TripSe4 => 1,
            _ => 16,
        });
        let cfg = BackboneConfig {
            in_channels: 1,
            num_classes: classes,
            stages: [
                StageSpec::new(widths[0], depth, false),
                StageSpec::new(widths[1], depth, true),
                StageSpec::new(widths[2], depth, true),
                StageSpec::new(widths[3], depth, true),
            ],
            attention: kind,
            reduction,
            kernel,
            input_size: (image_size, image_size),
            seed,
        };
        Ok(PyModel {
            inner: MiniBackbone::build(&cfg).map_err(py_err)?,
        })
    }

    #[pyo3(signature = (x, training = false))]
    fn forward(&self, x: &PyTensor, training: bool) -> PyResult<PyTensor> {
        Ok(PyTensor {
            inner: self.inner.forward(&x.inner, training).map_err(py_err)?,
        })
    }

    /// (total trainable parameters, parameters inside attention blocks).
    fn count_params(&self) -> (usize, usize) {
        self.inner.count_params()
    }

    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }

    fn params(&self) -> Vec<(String, PyTensor)> {
        self.inner
            .params()
            .into_iter()
            .map(|(name, t)| (name, PyTensor { inner: t }))
            .collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut file = std::fs::File::create(path)
            .map_err(|e| PyValueError::new_err(format!("cannot create {path}: {e}")))?;
        self.inner.save_weights(&mut file).map_err(py_err)
    }

    fn load(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::open(path)
            .map_err(|e| PyValueError::new_err(format!("cannot open {path}: {e}")))?;
        self.inner
            .load_weights(&mut std::io::BufReader::new(file))
            .map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let (total, attn) = self.inner.count_params();
        format!("Model(params={total}, attention_params={attn})")
    }
}

/// Per-stage and total attention parameter counts for a width plan, using
/// the reference stage extents of a 224-square input (56, 28, 14, 7).
#[pyfunction]
#[pyo3(signature = (variant, widths = None, ratio = 16, kernel = 7))]
fn attention_params(
    variant: &str,
    widths: Option<Vec<usize>>,
    ratio: usize,
    kernel: usize,
) -> PyResult<(Vec<usize>, usize)> {
    let kind = parse_kind(variant)?;
    let widths = widths4(widths, [96, 192, 384, 768])?;
    let sides = [56usize, 28, 14, 7];
    let mut per_stage = Vec::with_capacity(4);
    for (&c, &s) in widths.iter().zip(&sides) {
        let blk: AttentionBlock<f32> =
            AttentionBlock::new(kind, (c, s, s), ratio, kernel, 0).map_err(py_err)?;
        per_stage.push(blk.param_count());
    }
    let total = per_stage.iter().sum();
    Ok((per_stage, total))
}

/// Worst relative error between analytic and finite-difference gradients,
/// per parameter, in f64. With `backbone` the check runs end to end
/// through a small host network instead of a single block.
#[pyfunction]
#[pyo3(signature = (variant, shape = (1, 4, 5, 5), ratio = 2, kernel = 3, eps = 1e-5,
                    backbone = false))]
fn gradcheck(
    variant: &str,
    shape: (usize, usize, usize, usize),
    ratio: usize,
    kernel: usize,
    eps: f64,
    backbone: bool,
) -> PyResult<Vec<(String, f64)>> {
    let kind = parse_kind(variant)?;
    if backbone {
        gradcheck_backbone(kind, ratio, kernel, eps, false).map_err(py_err)
    } else {
        gradcheck_block(kind, shape, ratio, kernel, eps, false).map_err(py_err)
    }
}

/// Trains a small model on the synthetic striped-pattern dataset and
/// returns per-epoch (epoch, train_loss, train_acc, val_acc) tuples.
#[pyfunction]
#[pyo3(signature = (variant = "tripse1", classes = 3, per_class = 12, image_size = 16,
                    epochs = 2, batch_size = 6, lr = 1e-3, seed = 0, widths = None,
                    reduction = 2, kernel = 3))]
#[allow(clippy::too_many_arguments)]
fn train_synth(
    variant: &str,
    classes: usize,
    per_class: usize,
    image_size: usize,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
    widths: Option<Vec<usize>>,
    reduction: usize,
    kernel: usize,
) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let kind = parse_kind(variant)?;
    let widths = widths4(widths, [4, 6, 6, 8])?;
    let cfg = BackboneConfig {
        in_channels: 1,
        num_classes: classes,
        stages: [
            StageSpec::new(widths[0], 1, false),
            StageSpec::new(widths[1], 1, true),
            StageSpec::new(widths[2], 1, true),
            StageSpec::new(widths[3], 1, true),
        ],
        attention: kind,
        reduction,
        kernel,
        input_size: (image_size, image_size),
        seed,
    };
    let model = MiniBackbone::<f32>::build(&cfg).map_err(py_err)?;
    let size = (image_size, image_size);
    let train = synth_dataset::<f32>(classes, per_class, size, 0.05, seed).map_err(py_err)?;
    let val = synth_dataset::<f32>(classes, per_class.div_ceil(4), size, 0.05, mix_seed(seed, 1))
        .map_err(py_err)?;
    let plan = TrainPlan {
        epochs,
        batch_size,
        lr,
        seed,
        ..TrainPlan::default()
    };
    let report = run_training(&model, &train, &val, &plan, None, None).map_err(py_err)?;
    Ok(report
        .history
        .iter()
        .map(|m| (m.epoch, m.train_loss, m.train_acc, m.val_acc))
        .collect())
}

#[pymodule]
fn tripse_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyAttention>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(attention_params, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(train_synth, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
