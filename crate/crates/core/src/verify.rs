//! Gradient verification entry points used by the command-line harness.
//!
//! Both checks run in full f64 regardless of what element type training
//! uses: analytic gradients from one backward sweep are compared against
//! central finite differences for every element of every parameter, and the
//! worst relative error per parameter is reported. The `corrupt` flag
//! falsifies one analytic value before comparison, a negative control
//! proving the harness really fails when a backward rule is wrong.

use crate::attention::{AttentionBlock, AttentionKind};
use crate::autodiff::{no_grad, NoGrad};
use crate::backbone::{BackboneConfig, MiniBackbone, StageSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest acceptable worst-case relative error between analytic and
/// numeric gradients.
pub const DEFAULT_TOL: f64 = 1e-4;

fn check_params<F>(
    mut f: F,
    params: &[(String, Tensor<f64>)],
    eps: f64,
    corrupt: bool,
) -> Result<Vec<(String, f64)>>
where
    F: FnMut() -> Result<Tensor<f64>>,
{
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::argument("gradcheck eps must be positive"));
    }
    for (_, p) in params {
        p.zero_grad();
    }
    f()?.backward()?;

    let _guard = NoGrad::new();
    let two_eps = 2.0 * eps;
    let mut report = Vec::with_capacity(params.len());
    for (pi, (name, p)) in params.iter().enumerate() {
        let mut analytic = p.grad().ok_or_else(|| {
            Error::Graph(format!("no gradient reached parameter \"{name}\""))
        })?;
        if corrupt && pi == 0 {
            analytic[0] += 0.5;
        }
        let mut worst = 0.0f64;
        for i in 0..p.numel() {
            let original = p.to_vec()[i];
            p.with_data_mut(|d| d[i] = original + eps);
            let plus = f()?.item()?;
            p.with_data_mut(|d| d[i] = original - eps);
            let minus = f()?.item()?;
            p.with_data_mut(|d| d[i] = original);
            let numeric = (plus - minus) / two_eps;
            let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        report.push((name.clone(), worst));
    }
    Ok(report)
}

/// Checks one attention block of the given kind on a seeded input of
/// `shape` (N,C,H,W), including the input tensor itself. Batch norm runs in
/// eval mode so the objective is a fixed differentiable function.
pub fn gradcheck_block(
    kind: AttentionKind,
    shape: (usize, usize, usize, usize),
    reduction: usize,
    kernel: usize,
    eps: f64,
    corrupt: bool,
) -> Result<Vec<(String, f64)>> {
    let (n, c, h, w) = shape;
    let x: Tensor<f64> = Tensor::randn(&[n, c, h, w], 0.0, 1.0, 7)?.trainable();
    let blk: AttentionBlock<f64> = AttentionBlock::new(kind, (c, h, w), reduction, kernel, 8)?;
    let proj = Tensor::randn(&[n, c, h, w], 0.0, 1.0, 9)?;

    let mut params = vec![("input".to_string(), x.clone())];
    blk.params("block", &mut params);
    check_params(
        || blk.forward(&x, false)?.mul(&proj)?.sum_all(),
        &params,
        eps,
        corrupt,
    )
}

/// Checks a small depth-1 host network end to end: stem, residual blocks
/// with projections, the chosen attention variant in all four stages,
/// pooling, and the classifier, with batch norm in eval mode.
///
/// The probe point is conditioned first. Channel max-pooling is
/// non-differentiable wherever ReLU clips every channel at a position to
/// the same zero, so host batch-norm betas are shifted positive and the
/// running statistics warmed until pooled slices are untied; SE bottleneck
/// weights are rescaled so gates stay in their responsive range.
pub fn gradcheck_backbone(
    kind: AttentionKind,
    reduction: usize,
    kernel: usize,
    eps: f64,
    corrupt: bool,
) -> Result<Vec<(String, f64)>> {
    let cfg = BackboneConfig {
        in_channels: 1,
        num_classes: 2,
        stages: [
            StageSpec::new(2, 1, false),
            StageSpec::new(3, 1, true),
            StageSpec::new(3, 1, true),
            StageSpec::new(4, 1, true),
        ],
        attention: kind,
        reduction,
        kernel,
        input_size: (16, 16),
        seed: 200,
    };
    let m: MiniBackbone<f64> = MiniBackbone::build(&cfg)?;
    let x: Tensor<f64> = Tensor::randn(&[2, 1, 16, 16], 0.0, 1.0, 201)?.trainable();
    let proj = Tensor::randn(&[2, 2], 0.0, 1.0, 202)?;

    for (name, t) in m.params() {
        if !name.starts_with("attn") && name.ends_with(".beta") {
            t.with_data_mut(|d| d.iter_mut().for_each(|v| *v += 2.5));
        }
        if name.starts_with("attn") && name.contains(".fc") && name.ends_with(".weight") {
            t.with_data_mut(|d| d.iter_mut().for_each(|v| *v *= 0.15));
        }
    }
    no_grad(|| -> Result<()> {
        for _ in 0..40 {
            m.forward(&x, true)?;
        }
        Ok(())
    })?;

    let mut params = vec![("input".to_string(), x.clone())];
    params.extend(m.params());
    check_params(
        || m.forward(&x, false)?.mul(&proj)?.sum_all(),
        &params,
        eps,
        corrupt,
    )
}
