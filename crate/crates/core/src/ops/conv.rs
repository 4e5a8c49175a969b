use crate::autodiff::OpBackward;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::parallel;
use crate::shape::Shape;
use crate::tensor::{Fill, Tensor};

/// 2-D cross-correlation layer. Weight is (outC, inC, k, k) with a square,
/// odd or even kernel; bias is optional. Output spatial extents follow
/// `(in + 2*padding - k) / stride + 1`.
pub struct Conv2d<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub padding: usize,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        weight: Tensor<E>,
        bias: Option<Tensor<E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Conv2d<E>> {
        let dims = weight.shape().dims();
        if dims.len() != 4 || dims[2] != dims[3] {
            return Err(Error::shape(format!(
                "conv weight must be (outC, inC, k, k), got {}",
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::argument("conv stride must be positive"));
        }
        if let Some(b) = &bias {
            if b.shape().dims() != [dims[0]] {
                return Err(Error::shape(format!(
                    "conv bias must be ({}), got {}",
                    dims[0],
                    b.shape()
                )));
            }
        }
        Ok(Conv2d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    /// He-normal initialization (std = sqrt(2 / fan-in)), zero bias,
    /// reproducible from `seed`.
    pub fn seeded(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        seed: u64,
    ) -> Result<Conv2d<E>> {
        let fan_in = (in_c * k * k) as f64;
        let weight = Tensor::new(
            Shape::new(&[out_c, in_c, k, k])?,
            Fill::Normal {
                mean: 0.0,
                std: (2.0 / fan_in).sqrt(),
                seed,
            },
        )
        .trainable();
        let bias = with_bias.then(|| Tensor::zeros(&[out_c]).map(Tensor::trainable)).transpose()?;
        Conv2d::new(weight, bias, stride, padding)
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, h, w) = x.shape().dims4()?;
        let wd = self.weight.shape().dims();
        let (oc, k) = (wd[0], wd[2]);
        if wd[1] != c {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                wd[1], c
            )));
        }
        if h + 2 * self.padding < k || w + 2 * self.padding < k {
            return Err(Error::shape(format!(
                "kernel {k} does not fit padded input {h}x{w} (padding {})",
                self.padding
            )));
        }
        let oh = (h + 2 * self.padding - k) / self.stride + 1;
        let ow = (w + 2 * self.padding - k) / self.stride + 1;

        let geo = Geometry {
            n,
            c,
            h,
            w,
            oc,
            k,
            oh,
            ow,
            stride: self.stride,
            padding: self.padding,
        };
        let xd = x.data();
        let wgt = self.weight.data();
        let bias_guard = self.bias.as_ref().map(|b| b.data());
        let mut out = vec![E::ZERO; n * oc * oh * ow];
        parallel::for_each_slab(&mut out, oc * oh * ow, |n0, slab| {
            forward_batch_rows(&geo, &xd, &wgt, bias_guard.as_deref().map(|v| &v[..]), n0, slab);
        });
        drop((xd, wgt, bias_guard));

        let mut inputs = vec![x.clone(), self.weight.clone()];
        if let Some(b) = &self.bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            Shape::new(&[n, oc, oh, ow])?,
            out,
            Box::new(ConvOp { geo }),
            inputs,
        ))
    }

    pub fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<E>)>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    k: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

/// Output positions `lo..hi` along one axis whose kernel tap `k_off` reads
/// inside `[0, in_len)`: positions o with `0 <= o*stride + k_off - padding < in_len`.
fn valid_range(in_len: usize, out_len: usize, padding: usize, k_off: usize, stride: usize) -> (usize, usize) {
    let lo = if padding > k_off {
        (padding - k_off).div_ceil(stride)
    } else {
        0
    };
    if in_len + padding <= k_off {
        return (0, 0);
    }
    let hi = ((in_len - 1 + padding - k_off) / stride + 1).min(out_len);
    (lo, hi.max(lo))
}

/// Writes the feature-major im2col matrix of one image: row `(ci*k+kh)*k+kw`
/// holds that tap's value for every output position (zero outside the
/// padded input).
fn im2col<E: Element>(g: &Geometry, x_img: &[E], col: &mut [E]) {
    let pos = g.oh * g.ow;
    col.fill(E::ZERO);
    for ci in 0..g.c {
        let x_plane = &x_img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g.h, g.oh, g.padding, kh, g.stride);
            for kw in 0..g.k {
                let (ow_lo, ow_hi) = valid_range(g.w, g.ow, g.padding, kw, g.stride);
                let row = &mut col[((ci * g.k + kh) * g.k + kw) * pos..][..pos];
                for ohi in oh_lo..oh_hi {
                    let ih = ohi * g.stride + kh - g.padding;
                    if g.stride == 1 {
                        let x_off = ih * g.w + ow_lo + kw - g.padding;
                        row[ohi * g.ow + ow_lo..ohi * g.ow + ow_hi]
                            .copy_from_slice(&x_plane[x_off..x_off + (ow_hi - ow_lo)]);
                    } else {
                        for owi in ow_lo..ow_hi {
                            let iw = owi * g.stride + kw - g.padding;
                            row[ohi * g.ow + owi] = x_plane[ih * g.w + iw];
                        }
                    }
                }
            }
        }
    }
}

/// The transposed layout: row `oy*ow+ox` holds the full receptive-field
/// patch of that output position.
fn im2col_transposed<E: Element>(g: &Geometry, x_img: &[E], colt: &mut [E]) {
    let ckk = g.c * g.k * g.k;
    colt.fill(E::ZERO);
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let patch = &mut colt[(oy * g.ow + ox) * ckk..][..ckk];
            for ci in 0..g.c {
                let x_plane = &x_img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
                for kh in 0..g.k {
                    let ih = oy * g.stride + kh;
                    if ih < g.padding || ih - g.padding >= g.h {
                        continue;
                    }
                    let ih = ih - g.padding;
                    for kw in 0..g.k {
                        let iw = ox * g.stride + kw;
                        if iw < g.padding || iw - g.padding >= g.w {
                            continue;
                        }
                        patch[(ci * g.k + kh) * g.k + kw] = x_plane[ih * g.w + iw - g.padding];
                    }
                }
            }
        }
    }
}

/// out_img += weight x col, four output channels per pass so each col row
/// is loaded once per four accumulator rows.
fn matmul_into<E: Element>(wgt: &[E], col: &[E], ckk: usize, pos: usize, out_img: &mut [E]) {
    let oc = out_img.len() / pos;
    let mut o = 0;
    while o + 4 <= oc {
        let (r0, rest) = out_img[o * pos..(o + 4) * pos].split_at_mut(pos);
        let (r1, rest) = rest.split_at_mut(pos);
        let (r2, r3) = rest.split_at_mut(pos);
        for p in 0..ckk {
            let w0 = wgt[o * ckk + p];
            let w1 = wgt[(o + 1) * ckk + p];
            let w2 = wgt[(o + 2) * ckk + p];
            let w3 = wgt[(o + 3) * ckk + p];
            let c_row = &col[p * pos..][..pos];
            for j in 0..pos {
                let cv = c_row[j];
                r0[j] += w0 * cv;
                r1[j] += w1 * cv;
                r2[j] += w2 * cv;
                r3[j] += w3 * cv;
            }
        }
        o += 4;
    }
    while o < oc {
        let row = &mut out_img[o * pos..][..pos];
        for p in 0..ckk {
            let wv = wgt[o * ckk + p];
            let c_row = &col[p * pos..][..pos];
            for j in 0..pos {
                row[j] += wv * c_row[j];
            }
        }
        o += 1;
    }
}

fn forward_batch_rows<E: Element>(
    g: &Geometry,
    x: &[E],
    wgt: &[E],
    bias: Option<&[E]>,
    n0: usize,
    out: &mut [E],
) {
    let pos = g.oh * g.ow;
    let ckk = g.c * g.k * g.k;
    let per_in = g.c * g.h * g.w;
    let per_out = g.oc * pos;
    let mut col = vec![E::ZERO; ckk * pos];
    for (dn, out_img) in out.chunks_mut(per_out).enumerate() {
        let ni = n0 + dn;
        im2col(g, &x[ni * per_in..(ni + 1) * per_in], &mut col);
        for o in 0..g.oc {
            out_img[o * pos..(o + 1) * pos].fill(bias.map_or(E::ZERO, |b| b[o]));
        }
        matmul_into(wgt, &col, ckk, pos, out_img);
    }
}

struct ConvOp {
    geo: Geometry,
}

impl<E: Element> OpBackward<E> for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<E>], out_grad: &[E]) -> Result<Vec<Option<Vec<E>>>> {
        let g = &self.geo;
        let x = &inputs[0];
        let weight = &inputs[1];

        let grad_x = x.tracks_grad().then(|| {
            let wgt = weight.data();
            let mut gx = vec![E::ZERO; x.numel()];
            parallel::for_each_slab(&mut gx, g.c * g.h * g.w, |n0, slab| {
                backward_input_rows(g, &wgt, out_grad, n0, slab);
            });
            gx
        });

        let grad_w = weight.tracks_grad().then(|| {
            let xd = x.data();
            let mut gw = vec![E::ZERO; weight.numel()];
            backward_weight(g, &xd, out_grad, &mut gw);
            gw
        });

        let mut grads = vec![grad_x, grad_w];
        if inputs.len() == 3 {
            let gb = inputs[2].tracks_grad().then(|| {
                let mut gb = vec![E::ZERO; g.oc];
                for ni in 0..g.n {
                    for o in 0..g.oc {
                        let plane = &out_grad[(ni * g.oc + o) * g.oh * g.ow..];
                        let mut acc = E::ZERO;
                        for &v in &plane[..g.oh * g.ow] {
                            acc += v;
                        }
                        gb[o] += acc;
                    }
                }
                gb
            });
            grads.push(gb);
        }
        Ok(grads)
    }
}

/// Scatter-adds a feature-major column matrix back onto one input image,
/// the exact adjoint of [`im2col`].
fn col2im_add<E: Element>(g: &Geometry, dcol: &[E], gx_img: &mut [E]) {
    let pos = g.oh * g.ow;
    for ci in 0..g.c {
        let x_plane = &mut gx_img[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for kh in 0..g.k {
            let (oh_lo, oh_hi) = valid_range(g.h, g.oh, g.padding, kh, g.stride);
            for kw in 0..g.k {
                let (ow_lo, ow_hi) = valid_range(g.w, g.ow, g.padding, kw, g.stride);
                let row = &dcol[((ci * g.k + kh) * g.k + kw) * pos..][..pos];
                for ohi in oh_lo..oh_hi {
                    let ih = ohi * g.stride + kh - g.padding;
                    if g.stride == 1 {
                        let x_off = ih * g.w + ow_lo + kw - g.padding;
                        let x_row = &mut x_plane[x_off..x_off + (ow_hi - ow_lo)];
                        let d_row = &row[ohi * g.ow + ow_lo..ohi * g.ow + ow_hi];
                        for (xv, &dv) in x_row.iter_mut().zip(d_row) {
                            *xv += dv;
                        }
                    } else {
                        for owi in ow_lo..ow_hi {
                            let iw = owi * g.stride + kw - g.padding;
                            x_plane[ih * g.w + iw] += row[ohi * g.ow + owi];
                        }
                    }
                }
            }
        }
    }
}

fn backward_input_rows<E: Element>(
    g: &Geometry,
    wgt: &[E],
    out_grad: &[E],
    n0: usize,
    gx: &mut [E],
) {
    let pos = g.oh * g.ow;
    let ckk = g.c * g.k * g.k;
    let per_in = g.c * g.h * g.w;
    let per_out = g.oc * pos;
    let mut dcol = vec![E::ZERO; ckk * pos];
    for (dn, gx_img) in gx.chunks_mut(per_in).enumerate() {
        let ni = n0 + dn;
        dcol.fill(E::ZERO);
        let dout_img = &out_grad[ni * per_out..][..per_out];
        for o in 0..g.oc {
            let g_row = &dout_img[o * pos..][..pos];
            for p in 0..ckk {
                let wv = wgt[o * ckk + p];
                let d_row = &mut dcol[p * pos..][..pos];
                for j in 0..pos {
                    d_row[j] += wv * g_row[j];
                }
            }
        }
        col2im_add(g, &dcol, gx_img);
    }
}

fn backward_weight<E: Element>(g: &Geometry, x: &[E], out_grad: &[E], gw: &mut [E]) {
    let pos = g.oh * g.ow;
    let ckk = g.c * g.k * g.k;
    let per_in = g.c * g.h * g.w;
    let per_out = g.oc * pos;
    let mut colt = vec![E::ZERO; pos * ckk];
    for ni in 0..g.n {
        im2col_transposed(g, &x[ni * per_in..(ni + 1) * per_in], &mut colt);
        let dout_img = &out_grad[ni * per_out..][..per_out];
        for o in 0..g.oc {
            let gw_row = &mut gw[o * ckk..][..ckk];
            let g_row = &dout_img[o * pos..][..pos];
            for (j, &gv) in g_row.iter().enumerate() {
                let patch = &colt[j * ckk..][..ckk];
                for q in 0..ckk {
                    gw_row[q] += gv * patch[q];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity_kernel() {
        let x: Tensor<f32> = Tensor::randn(&[2, 1, 4, 4], 0.0, 1.0, 1).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
        let conv = Conv2d::new(w, None, 1, 0).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_counts_window_overlap() {
        let x: Tensor<f32> = Tensor::full(&[1, 1, 5, 5], 1.0).unwrap();
        let w: Tensor<f32> = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let conv = Conv2d::new(w, None, 1, 1).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 1, 5, 5]);
        let v = y.to_vec();
        assert_eq!(v[0], 4.0);
        assert_eq!(v[4], 4.0);
        assert_eq!(v[12], 9.0);
        assert_eq!(v[24], 4.0);
        assert_eq!(v[1], 6.0);
    }

    #[test]
    fn stride_two_halves_spatial_extent() {
        let x: Tensor<f32> = Tensor::randn(&[1, 3, 8, 8], 0.0, 1.0, 2).unwrap();
        let conv: Conv2d<f32> = Conv2d::seeded(3, 5, 3, 2, 1, true, 3).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape().dims(), &[1, 5, 4, 4]);
        assert!(y.all_finite());
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x: Tensor<f32> = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        let conv: Conv2d<f32> = Conv2d::seeded(2, 4, 3, 1, 1, false, 0).unwrap();
        assert!(conv.forward(&x).is_err());
    }

    #[test]
    fn bias_gradient_sums_output_grad() {
        let x: Tensor<f32> = Tensor::full(&[1, 1, 2, 2], 0.0).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]).unwrap().trainable();
        let b = Tensor::from_vec(&[1], vec![0.5f32]).unwrap().trainable();
        let conv = Conv2d::new(w, Some(b.clone()), 1, 0).unwrap();
        conv.forward(&x).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![4.0]);
    }
}
