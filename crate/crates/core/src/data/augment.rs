//! Image-space transforms for the data pipeline: align-corners-false
//! bilinear resizing, rotation about the image center with zero fill, and
//! horizontal flips. These operate on raw pixel data outside the autodiff
//! graph.

use rand::Rng;

use super::Sample;
use crate::element::Element;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training-time augmentation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Probability of mirroring the width axis.
    pub hflip_prob: f64,
    /// Rotation angle range in degrees, inclusive.
    pub rotation_degrees: (f64, f64),
    /// Output size every image is resized to.
    pub target_size: (usize, usize),
    pub seed: u64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::Config(format!(
                "hflip probability {} outside [0,1]",
                self.hflip_prob
            )));
        }
        if self.rotation_degrees.0 > self.rotation_degrees.1 {
            return Err(Error::Config(format!(
                "rotation range ({}, {}) has min above max",
                self.rotation_degrees.0, self.rotation_degrees.1
            )));
        }
        if self.target_size.0 == 0 || self.target_size.1 == 0 {
            return Err(Error::Config("target size extents must be >= 1".into()));
        }
        Ok(())
    }
}

fn rank3(img: &Tensor<impl Element>) -> Result<(usize, usize, usize)> {
    let dims = img.shape().dims();
    if dims.len() != 3 {
        return Err(Error::shape(format!(
            "expected a (C,H,W) image, got {}",
            img.shape()
        )));
    }
    Ok((dims[0], dims[1], dims[2]))
}

/// Align-corners-false bilinear interpolation to `target` = (H',W'). Source
/// coordinates are clamped at the borders, so constant images stay constant
/// and values never leave the input range.
pub fn resize_bilinear<E: Element>(
    img: &Tensor<E>,
    target: (usize, usize),
) -> Result<Tensor<E>> {
    let (c, h, w) = rank3(img)?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::argument("resize target extents must be >= 1"));
    }

    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let ys = axis(th, h);
    let xs = axis(tw, w);

    let src = img.to_vec();
    let mut out = Vec::with_capacity(c * th * tw);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let v00 = plane[y0 * w + x0].to_f64();
                let v01 = plane[y0 * w + x1].to_f64();
                let v10 = plane[y1 * w + x0].to_f64();
                let v11 = plane[y1 * w + x1].to_f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.push(E::from_f64(top + (bot - top) * fy));
            }
        }
    }
    Tensor::from_vec(&[c, th, tw], out)
}

/// Rotates by `degrees` counterclockwise about the image center with
/// bilinear sampling; source taps outside the image contribute zero.
pub fn rotate_bilinear<E: Element>(img: &Tensor<E>, degrees: f64) -> Result<Tensor<E>> {
    let (c, h, w) = rank3(img)?;
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;

    let src = img.to_vec();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        let tap = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                plane[y as usize * w + x as usize].to_f64()
            }
        };
        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let sy = cos * dy + sin * dx + cy;
                let sx = -sin * dy + cos * dx + cx;
                let y0 = sy.floor();
                let x0 = sx.floor();
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx;
                let bot = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx;
                out.push(E::from_f64(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Mirrors the width axis.
pub fn hflip<E: Element>(img: &Tensor<E>) -> Result<Tensor<E>> {
    let (c, h, w) = rank3(img)?;
    let src = img.to_vec();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
            out.extend(row.iter().rev().copied());
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

/// Applies the policy to one sample: flip with `hflip_prob`, rotate by an
/// angle drawn uniformly from the configured range, then resize to the
/// target size. Draw order is fixed (flip first, then angle) so a given
/// generator state yields one reproducible result.
pub fn augment<E: Element>(
    s: &Sample<E>,
    a: &AugmentConfig,
    rng: &mut impl Rng,
) -> Result<Sample<E>> {
    a.validate()?;
    let flip = rng.random::<f64>() < a.hflip_prob;
    let (lo, hi) = a.rotation_degrees;
    let angle = if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut image = s.image.clone();
    if flip {
        image = hflip(&image)?;
    }
    if angle != 0.0 {
        image = rotate_bilinear(&image, angle)?;
    }
    let dims = image.shape().dims();
    if (dims[1], dims[2]) != a.target_size {
        image = resize_bilinear(&image, a.target_size)?;
    }
    Ok(Sample {
        image,
        label: s.label,
    })
}
